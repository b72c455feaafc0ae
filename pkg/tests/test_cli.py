import json

import numpy as np
import pytest

from sodavit.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, run
from sodavit.model import ModelConfig, load_checkpoint

TINY = ModelConfig(blocks=1, hidden=8, heads=2, clip_len=56)
FAST = ["--epochs", "2", "--batch-size", "16", "--min-epochs", "0", "--patience", "5"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY.to_kv())
    assert run(["synth", "--subjects", "2", "--activities", "3", "--repeats", "5", "--seed", "4", "--out", str(root / "syn")]) == EXIT_OK
    return root, cfg, root / "syn" / "data"


def test_count_preset(tmp_path, capsys):
    assert run(["count", "--model", "vit-ms/8", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "3250450" in out and "93362688" in out
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "count" and manifest["model_config"]["hidden"] == 256


def test_unknown_flag_is_usage_error(tmp_path):
    assert run(["count", "--bogus", "--out", str(tmp_path)]) == EXIT_USAGE
    assert run(["count", "--model", "vit-xxl/8", "--out", str(tmp_path)]) == EXIT_USAGE


def test_synth_writes_one_file_per_recording(workspace):
    _, _, data = workspace
    assert len(list(data.glob("*.csv"))) == 2 * 3 * 5


def test_malformed_data_exit_code(tmp_path):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "x.csv").write_text("# subject = 0\n# activity = 1\n# repeat = 0\n0.0,1,2\n")
    assert run(["train", "--data", str(bad), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert run(["eval-cv", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == EXIT_DATA


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergent_training_exit_code(workspace, tmp_path):
    _, cfg, data = workspace
    argv = ["train", "--data", str(data), "--model-config", str(cfg), "--lr", "1e308", "--epochs", "5", "--out", str(tmp_path)]
    assert run(argv) == EXIT_NUMERIC


def test_train_then_infer(workspace, tmp_path, capsys):
    _, cfg, data = workspace
    out = tmp_path / "train"
    assert run(["train", "--data", str(data), "--model-config", str(cfg), *FAST, "--out", str(out)]) == EXIT_OK
    assert len((out / "history.log").read_text().splitlines()) == 2
    model = load_checkpoint(out / "model.ckpt", expect=TINY)
    stream = tmp_path / "rows.txt"
    rows = np.random.default_rng(0).normal(size=(500, 6))
    stream.write_text("".join(f"{i * 0.02:.2f}," + ",".join(f"{v:.6f}" for v in r) + "\n" for i, r in enumerate(rows)))
    capsys.readouterr()
    assert run(["infer", "--checkpoint", str(out / "model.ckpt"), "--data", str(stream), "--out", str(tmp_path / "inf")]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    decisions = [json.loads(x) for x in lines]
    assert [d["valid_len"] for d in decisions] == [224, 224, 52]
    parsed = np.array([[float(v) for v in ln.split(",")[1:]] for ln in stream.read_text().splitlines()])
    first = model(parsed[:224][None]).data[0]
    assert decisions[0]["class"] == int(np.argmax(first))
    assert all(d["status"] in ("ALERT", "SILENT") for d in decisions)


def test_train_is_byte_reproducible(workspace, tmp_path):
    _, cfg, data = workspace
    for name in ("a", "b"):
        assert run(["train", "--data", str(data), "--model-config", str(cfg), *FAST, "--seed", "9", "--out", str(tmp_path / name)]) == EXIT_OK
    for f in ("history.log", "model.ckpt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    ma, mb = (json.loads((tmp_path / n / "manifest.json").read_text()) for n in "ab")
    ma["flags"].pop("out"), mb["flags"].pop("out")
    assert ma == mb


@pytest.mark.parametrize("command,runs", [("eval-cv", 5), ("eval-loso", 2)])
def test_eval_outputs(workspace, tmp_path, capsys, command, runs):
    _, cfg, data = workspace
    tables = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run([command, "--data", str(data), "--model-config", str(cfg), *FAST, "--out", str(out)]) == EXIT_OK
        for f in ("table.csv", "confusion.csv", "report.txt", "manifest.json"):
            assert (out / f).is_file()
        assert len(list(out.glob("history_*.log"))) == runs
        tables.append((out / "table.csv").read_bytes())
    assert tables[0] == tables[1]
    head = capsys.readouterr().out.splitlines()
    assert head[0].split()[-1] == "Mean" and head[1].startswith("Accuracy")

    assert run(["report", "--data", str(tmp_path / "a"), "--out", str(tmp_path / "r")]) == EXIT_OK
    assert "vit-s/32" in (tmp_path / "r" / "report.txt").read_text()
