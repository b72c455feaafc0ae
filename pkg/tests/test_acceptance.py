"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line to the terminal
(visible even under output capture).  Run just this file with::

    pytest tests/test_acceptance.py -v
"""

import contextlib
import time

import numpy as np
import pytest

from sodavit.cli import EXIT_OK, run
from sodavit.dataset import MIN_LEN, WINDOW, LabelTaxonomy, SensorSample, SynthSpec, segment, segment_all, synth_generate, to_arrays
from sodavit.evaluation import (
    EvalReport,
    alert_metrics,
    cross_validate,
    loso_evaluate,
    make_folds,
    split_runs,
    weighted_accuracy,
)
from sodavit.layers import Module, Parameter
from sodavit.model import ViTModel, count_flops, count_params, predict, preset
from sodavit.tensor import Tape, Tensor, cross_entropy
from sodavit.training import TrainConfig, Trainer, lr_at, train

pytestmark = pytest.mark.slow

# published (parameters in millions, MAC-count FLOPs in millions)
PUBLISHED = {
    "vit-es/8": (0.43, 12.10),
    "vit-es/16": (0.44, 6.23),
    "vit-es/32": (0.45, 3.38),
    "vit-ms/8": (3.23, 93.63),
    "vit-ms/16": (3.24, 48.16),
    "vit-ms/32": (3.27, 25.73),
    "vit-s/8": (25.36, 739.0),
    "vit-s/16": (25.38, 381.0),
    "vit-s/32": (25.43, 203.0),
}
MIXED_IDS = (0, 2, 5, 10, 16, 17)  # three alert-class and three silent-class activities


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def check(tag, title):
        t0 = time.perf_counter()
        detail = {}
        try:
            yield detail
        except BaseException:
            with capsys.disabled():
                print(f"\n[FAIL] {tag} {title} ({time.perf_counter() - t0:.1f}s) {detail.get('msg', '')}")
            raise
        with capsys.disabled():
            print(f"\n[PASS] {tag} {title} ({time.perf_counter() - t0:.1f}s) {detail.get('msg', '')}")

    return check


def test_c01_parameter_accounting(criterion):
    with criterion("C1", "parameter counts within 3% of published") as d:
        worst = 0.0
        for name, (rp, _) in PUBLISHED.items():
            rel = abs(count_params(preset(name)) / 1e6 - rp) / rp
            worst = max(worst, rel)
            assert rel < 0.03, (name, count_params(preset(name)))
        d["msg"] = f"worst {worst:.2%}"


def test_c02_flop_accounting(criterion):
    with criterion("C2", "FLOP counts within 5% of published") as d:
        worst = 0.0
        for name, (_, rf) in PUBLISHED.items():
            rel = abs(count_flops(preset(name)) / 1e6 - rf) / rf
            worst = max(worst, rel)
            assert rel < 0.05, (name, count_flops(preset(name)))
        d["msg"] = f"worst {worst:.2%}"


def test_c03_gradient_integrity(criterion):
    with criterion("C3", "ES/8 tape gradients vs central differences") as d:
        r = np.random.default_rng(2024)
        model = ViTModel(preset("vit-es/8"), np.random.default_rng(11))
        x, y = r.normal(size=(2, WINDOW, 6)), np.array([4, 13])
        params = model.parameters()
        with Tape() as tape:
            loss = cross_entropy(model(x), y)
        tape.backward(loss, params)

        sizes = np.array([p.size for p in params])
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        picks = r.choice(bounds[-1], size=32, replace=False)
        # one coordinate from every parameter tensor too, so no tensor is skipped
        picks = np.concatenate([picks, bounds[:-1] + r.integers(0, sizes)])
        step, worst = 1e-4, 0.0
        for flat in picks:
            k = int(np.searchsorted(bounds, flat, side="right") - 1)
            p = params[k]
            idx = np.unravel_index(int(flat - bounds[k]), p.data.shape)
            old = p.data[idx]
            p.data[idx] = old + step
            hi = cross_entropy(model(x), y).item()
            p.data[idx] = old - step
            lo = cross_entropy(model(x), y).item()
            p.data[idx] = old
            fd, g = (hi - lo) / (2 * step), p.grad[idx]
            rel = abs(fd - g) / max(abs(fd), abs(g), 1e-12)
            worst = max(worst, rel)
            assert rel < 1e-4, (k, idx, fd, g)
        d["msg"] = f"{len(picks)} coordinates, worst relative error {worst:.1e}"


def test_c04_overfit_ten_segments(criterion):
    with criterion("C4", "ES/8 memorises 10 segments within 200 epochs") as d:
        samples = synth_generate(SynthSpec(1, repeats=2, activity_ids=(0, 2, 3, 5, 7, 10, 12, 14, 16, 17)), seed=3)
        segs = segment_all(samples)
        picked, seen = [], set()
        for s in segs:  # one per class first, then fill
            if s.label not in seen:
                picked.append(s)
                seen.add(s.label)
        chosen = {id(s) for s in picked}
        picked += [s for s in segs if id(s) not in chosen][: 10 - len(picked)]
        X, y, _ = to_arrays(picked[:10])
        assert len(X) == 10
        trainer = Trainer(ViTModel(preset("vit-es/8"), np.random.default_rng([0, 0])), X, y, TrainConfig())
        reached = None
        while not trainer.done and trainer.epoch < 200:
            trainer.run_epoch()
            if (predict(trainer.model, X).argmax(axis=1) == y).all():
                reached = trainer.epoch
                break
        assert reached is not None
        d["msg"] = f"100% after {reached} epochs"


def _check_fold_plan(samples, plan):
    keys = {s.key for s in samples}
    members = [plan.members(k) for k in range(5)]
    assert set().union(*members) == keys and sum(map(len, members)) == len(keys)
    cells = {(s.subject_id, s.activity_id) for s in samples}
    for subj, act in cells:
        reps = sorted(s.repeat_idx for s in samples if (s.subject_id, s.activity_id) == (subj, act))
        seq = [plan.groups[(subj, act, r)] for r in reps]
        assert seq == sorted(seq) and [seq.count(k) for k in range(5)] == split_runs(len(reps))


def test_c05_synthetic_cross_validation(criterion):
    with criterion("C5", "reduced 4x6x10 synthetic 5-fold CV, ES/8, mean >= 0.90") as d:
        t0 = time.perf_counter()
        samples = synth_generate(SynthSpec(4, repeats=10, activity_ids=MIXED_IDS), seed=21)
        plan = make_folds(samples)
        _check_fold_plan(samples, plan)
        result = cross_validate(samples, preset("vit-es/8"), TrainConfig(max_epochs=30, batch_size=32))
        all_keys = {s.key for s in samples}
        tests = []
        for k, run_ in enumerate(result.runs):
            assert not run_.train_keys & run_.test_keys
            assert run_.train_keys | run_.test_keys == all_keys
            assert run_.test_keys == plan.members(k)
            tests.append(run_.test_keys)
        assert set().union(*tests) == all_keys and sum(map(len, tests)) == len(all_keys)
        pooled = result.pooled()
        assert pooled.alert.success_alert is not None and pooled.alert.success_silence is not None
        elapsed = time.perf_counter() - t0
        d["msg"] = f"folds {[round(a, 3) for a in result.accuracies]} mean {result.mean_accuracy:.3f} in {elapsed:.0f}s"
        assert result.mean_accuracy >= 0.90
        assert elapsed < 15 * 60


def test_c06_loso_protocol(criterion):
    with criterion("C6", "3-subject LOSO trains 3 models without leakage") as d:
        samples = synth_generate(SynthSpec(3, repeats=5, activity_ids=MIXED_IDS), seed=8)
        result = loso_evaluate(samples, preset("vit-es/8"), TrainConfig(max_epochs=15, batch_size=32), keep_models=True)
        assert len(result.runs) == 3
        assert len({id(r.model) for r in result.runs}) == 3
        for held, run_ in zip((0, 1, 2), result.runs):
            assert {k[0] for k in run_.train_keys} == {0, 1, 2} - {held}
            assert {k[0] for k in run_.test_keys} == {held}
            assert set(run_.report.subjects) == {held}
        mean = result.mean_accuracy
        assert np.isfinite(mean)
        d["msg"] = f"per-subject {[round(a, 3) for a in result.accuracies]} mean {mean:.3f}"


def test_c07_metric_identities(criterion):
    with criterion("C7", "metric identities hold exactly") as d:
        two = LabelTaxonomy(labels=("alert", "silent"), alert_set=frozenset({0}))
        assert alert_metrics(np.array([[9, 1], [2, 8]]), two).as_tuple() == (0.9, 0.1, 0.8, 0.2)
        r = np.random.default_rng(77)
        for _ in range(500):
            n = int(r.integers(1, 400))
            y_true, subj = r.integers(0, 18, n), r.integers(0, 10, n)
            y_pred = np.where(r.random(n) < 0.7, y_true, r.integers(0, 18, n))
            rep = EvalReport.from_predictions(y_true, y_pred, subj)
            assert int(np.trace(rep.confusion)) / int(rep.confusion.sum()) == rep.accuracy
            assert rep.accuracy == int((y_true == y_pred).sum()) / n
            assert weighted_accuracy(rep.subjects) == rep.accuracy
        d["msg"] = "hand matrix + 500 random reports"


def _reference_windows(n):
    """(valid_len, start row) per window: cut at multiples of 224, keep a tail of >= 40."""
    out = []
    start = 0
    while n - start >= WINDOW:
        out.append((WINDOW, start))
        start += WINDOW
    if n - start >= MIN_LEN:
        out.append((n - start, start))
    return out


def test_c08_segmentation_oracle(criterion):
    with criterion("C8", "segmentation matches reference on 1000 lengths") as d:
        r = np.random.default_rng(8)
        for n in r.integers(1, 2001, size=1000):
            n = int(n)
            acc, gyro = r.normal(size=(n, 3)) + 1.0, r.normal(size=(n, 3)) - 1.0
            segs = segment(SensorSample(0, 0, 0, np.arange(n) * 0.02, acc, gyro))
            ref = _reference_windows(n)
            assert len(segs) == len(ref)
            for s, (valid, start) in zip(segs, ref):
                assert s.valid_len == valid and s.x_a.shape == (WINDOW, 3)
                assert np.array_equal(s.x_a[:valid], acc[start : start + valid])
                assert np.array_equal(s.x_g[:valid], gyro[start : start + valid])
                assert not s.x_a[valid:].any() and not s.x_g[valid:].any()
        d["msg"] = "counts, lengths and padding agree"


def test_c09_determinism(criterion, tmp_path):
    with criterion("C9", "two identical train runs are byte-identical") as d:
        assert run(["synth", "--subjects", "2", "--activities", "4", "--repeats", "3", "--seed", "5", "--out", str(tmp_path / "syn")]) == EXIT_OK
        argv = ["train", "--data", str(tmp_path / "syn" / "data"), "--model", "vit-es/8", "--epochs", "12", "--batch-size", "16", "--seed", "42"]
        for name in ("a", "b"):
            assert run(argv + ["--out", str(tmp_path / name)]) == EXIT_OK
        for f in ("history.log", "model.ckpt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
        d["msg"] = "history.log and model.ckpt match"


class _ConstantLoss(Module):
    def __init__(self):
        self.w = Parameter(np.zeros(2))

    def forward(self, x):
        return Tensor(np.zeros((len(x), 18)))


def test_c10_schedule_conformance(criterion):
    with criterion("C10", "step schedule and early-stop epoch") as d:
        cfg = TrainConfig()
        assert (lr_at(0, cfg), lr_at(40, cfg), lr_at(80, cfg)) == (5e-4, 2.5e-4, 1.25e-4)
        _, hist = train(_ConstantLoss(), (np.zeros((4, WINDOW, 6)), np.arange(4)), cfg)
        assert hist.stopped_early and len(hist.records) == cfg.min_epochs_before_stop + cfg.patience
        d["msg"] = f"stopped after {len(hist.records)} epochs"
