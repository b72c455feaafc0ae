"""Time-ordered 5-fold CV on a seeded synthetic corpus.

Defaults to the full 10 subjects x 18 activities x 10 repeats with ViT-ES/8;
on one CPU core that takes roughly half an hour at 30 epochs.  Use
``--subjects 4 --activities 6`` for a few-minute run.
"""

import argparse
import logging
import time

from sodavit.cli import format_runs
from sodavit.dataset import SynthSpec, synth_generate
from sodavit.evaluation import REFERENCE_CV_FOLDS_MS8, REFERENCE_CV_MEAN_MS8, cross_validate
from sodavit.model import preset
from sodavit.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--subjects", type=int, default=10)
    ap.add_argument("--activities", type=int, default=18)
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--model", default="vit-es/8")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    samples = synth_generate(SynthSpec(args.subjects, args.activities, args.repeats), seed=args.seed)
    cfg = TrainConfig(max_epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    t0 = time.perf_counter()
    result = cross_validate(samples, preset(args.model), cfg)
    print(format_runs(result, "Test Group"), end="")
    print(result.pooled().to_text("[pooled]"), end="")
    print(f"elapsed {time.perf_counter() - t0:.0f}s")
    ref = "  ".join(f"{a:.3f}" for a in REFERENCE_CV_FOLDS_MS8)
    print(f"reference (ViT-MS/8, real recordings): {ref}  mean {REFERENCE_CV_MEAN_MS8:.3f}")


if __name__ == "__main__":
    main()
