"""Command-line entry point: ``sodavit <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .alert import parse_rows, stream_infer
from .dataset import LabelTaxonomy, DEFAULT_TAXONOMY, SynthSpec, load_dataset, save_dataset, segment_all, synth_generate, to_arrays
from .errors import ConfigError, ContractError, DataError, NumericError, SodaError
from .evaluation import NUM_FOLDS, confusion_csv, cross_validate, loso_evaluate
from .model import PRESET_NAMES, REPORTED_COSTS, ModelConfig, ViTModel, count_flops, count_params, load_checkpoint, preset, save_checkpoint
from .training import TrainConfig, Trainer

log = logging.getLogger("sodavit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_out(p):
    p.add_argument("--out", default="sodavit-out", help="output directory (default: %(default)s)")


def _add_model(p):
    p.add_argument("--model", default="vit-es/8", help=f"preset, one of {', '.join(PRESET_NAMES)}")
    p.add_argument("--model-config", help="key = value model config file; overrides --model")


def _add_train(p):
    d = TrainConfig()
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=d.max_epochs, help="maximum epochs")
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.lr0, help="initial learning rate")
    p.add_argument("--patience", type=int, default=d.patience)
    p.add_argument("--min-epochs", type=int, default=d.min_epochs_before_stop)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sodavit", description="Smartwatch social-distancing alert toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("synth", help="generate a synthetic recording corpus")
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--activities", type=int, default=18)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)

    p = sub.add_parser("train", help="train one model on a corpus")
    p.add_argument("--data", required=True, help="directory of record files")
    _add_model(p)
    _add_train(p)
    _add_out(p)

    for name, text in (("eval-cv", "time-ordered 5-fold cross-validation"), ("eval-loso", "leave-one-subject-out evaluation")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--data", required=True, help="directory of record files")
        p.add_argument("--labels", help="label registry file (index = name)")
        _add_model(p)
        _add_train(p)
        _add_out(p)

    p = sub.add_parser("count", help="parameter and FLOP count of a model")
    _add_model(p)
    _add_out(p)

    p = sub.add_parser("infer", help="stream rows through a trained model")
    p.add_argument("--checkpoint", required=True, help="model checkpoint from `train`")
    p.add_argument("--data", default="-", help="row file (timestamp + 6 values per line), '-' for stdin")
    p.add_argument("--labels", help="label registry file (index = name)")
    p.add_argument("--hop", type=int, default=None, help="window start spacing in rows (default 224)")
    p.add_argument("--threshold", type=float, default=0.0, help="minimum confidence to raise an alert")
    _add_out(p)

    p = sub.add_parser("report", help="parameter/FLOP table for all presets next to reported values")
    p.add_argument("--data", help="evaluation output directory to summarise")
    _add_out(p)
    return parser


def _model_config(args) -> ModelConfig:
    if getattr(args, "model_config", None):
        return ModelConfig.from_file(args.model_config)
    return preset(args.model)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        lr0=args.lr,
        weight_decay=args.weight_decay,
        max_epochs=args.epochs,
        patience=args.patience,
        min_epochs_before_stop=args.min_epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def _taxonomy(args) -> LabelTaxonomy:
    return LabelTaxonomy.from_registry(args.labels) if getattr(args, "labels", None) else DEFAULT_TAXONOMY


def _write_manifest(out: Path, args, model_cfg=None, train_cfg=None) -> None:
    flags = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    manifest = {
        "command": args.command,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "model_config": asdict(model_cfg) if model_cfg else None,
        "train_config": asdict(train_cfg) if train_cfg else None,
        "versions": {"sodavit": __version__, "python": platform.python_version(), "numpy": np.__version__},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _cmd_synth(args, out: Path) -> None:
    spec = SynthSpec(args.subjects, args.activities, args.repeats)
    try:
        samples = synth_generate(spec, args.seed)
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    n = save_dataset(samples, out / "data")
    print(f"wrote {n} recordings to {out / 'data'}")
    _write_manifest(out, args)


def _cmd_train(args, out: Path) -> None:
    mcfg, tcfg = _model_config(args), _train_config(args)
    _write_manifest(out, args, mcfg, tcfg)
    X, y, _ = to_arrays(segment_all(load_dataset(args.data)))
    if len(X) == 0:
        raise DataError(f"{args.data}: no usable segments")
    trainer = Trainer(ViTModel(mcfg, np.random.default_rng([tcfg.seed, 0])), X, y, tcfg)
    with open(out / "history.log", "w") as fh:
        while not trainer.done:
            rec = trainer.run_epoch()
            fh.write(rec.line() + "\n")
            log.info(rec.line())
    save_checkpoint(trainer.model, out / "model.ckpt")
    last = trainer.history.records[-1]
    stop = "early stop" if trainer.history.stopped_early else "epoch cap"
    print(f"trained {len(trainer.history.records)} epochs ({stop}); final loss {last.loss:.6f}, train accuracy {last.accuracy:.4f}")


def _cmd_eval(args, out: Path) -> None:
    mcfg, tcfg = _model_config(args), _train_config(args)
    _write_manifest(out, args, mcfg, tcfg)
    taxonomy = _taxonomy(args)
    samples = load_dataset(args.data)
    if not samples:
        raise DataError(f"{args.data}: no recordings")
    protocol = cross_validate if args.command == "eval-cv" else loso_evaluate
    try:
        result = protocol(samples, mcfg, tcfg)
    except ContractError as exc:
        raise DataError(str(exc)) from None
    for run in result.runs:
        (out / f"history_{run.name}.log").write_text(run.history.to_text())
    pooled = result.pooled(taxonomy)
    (out / "table.csv").write_text(result.table())
    (out / "confusion.csv").write_text(confusion_csv(pooled.confusion, taxonomy))
    text = [format_runs(result, "Test Group" if args.command == "eval-cv" else "Held-out")]
    for run in result.runs:
        text.append(run.report.to_text(f"[{run.name}]"))
    text.append(pooled.to_text("[pooled]"))
    (out / "report.txt").write_text("\n".join(text))
    print(text[0], end="")


def format_runs(result, head: str) -> str:
    names = [r.name for r in result.runs] + ["Mean"]
    accs = [f"{a:.3f}" for a in result.accuracies] + [f"{result.mean_accuracy:.3f}"]
    width = max(len(head), 8)
    cols = [max(len(n), len(a)) + 2 for n, a in zip(names, accs)]
    row1 = head.ljust(width) + "".join(n.rjust(c) for n, c in zip(names, cols))
    row2 = "Accuracy".ljust(width) + "".join(a.rjust(c) for a, c in zip(accs, cols))
    return row1 + "\n" + row2 + "\n"


def _cmd_count(args, out: Path) -> None:
    cfg = _model_config(args)
    _write_manifest(out, args, cfg)
    p, f = count_params(cfg), count_flops(cfg)
    print(f"model       {args.model if not args.model_config else args.model_config}")
    print(f"parameters  {p} ({p / 1e6:.2f}M)")
    print(f"FLOPs       {f} ({f / 1e6:.2f}M, multiply-accumulates)")


def _cmd_infer(args, out: Path) -> None:
    _write_manifest(out, args)
    model = load_checkpoint(args.checkpoint)
    taxonomy = _taxonomy(args)
    src = sys.stdin if args.data == "-" else open(args.data)
    try:
        with open(out / "decisions.jsonl", "w") as fh:
            for d in stream_infer(parse_rows(src), model, taxonomy, args.hop, args.threshold):
                line = d.to_json()
                fh.write(line + "\n")
                print(line)
    finally:
        if src is not sys.stdin:
            src.close()


def _cmd_report(args, out: Path) -> None:
    _write_manifest(out, args)
    lines = [f"{'model':<10}{'params(M)':>11}{'reported':>10}{'FLOPs(M)':>11}{'reported':>10}"]
    for name in PRESET_NAMES:
        cfg = preset(name)
        rp, rf = REPORTED_COSTS[name]
        lines.append(f"{name:<10}{count_params(cfg) / 1e6:>11.2f}{rp:>10.2f}{count_flops(cfg) / 1e6:>11.2f}{rf:>10.2f}")
    text = "\n".join(lines) + "\n"
    if args.data:
        rep = Path(args.data) / "report.txt"
        if not rep.is_file():
            raise DataError(f"{args.data}: no report.txt found")
        text += "\n" + rep.read_text()
    (out / "report.txt").write_text(text)
    print(text, end="")


COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval-cv": _cmd_eval,
    "eval-loso": _cmd_eval,
    "count": _cmd_count,
    "infer": _cmd_infer,
    "report": _cmd_report,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, SodaError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
