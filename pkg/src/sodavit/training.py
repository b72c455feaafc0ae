"""AdamW training with step-decayed learning rate and training-loss early stop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .layers import Module, Parameter
from .tensor import Tape, cross_entropy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 5e-4
    decay_ratio: float = 0.5
    decay_every: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    max_epochs: int = 400
    patience: int = 40
    min_epochs_before_stop: int = 80
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.decay_ratio <= 1:
            raise ConfigError("decay_ratio must lie in (0, 1]")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.decay_every < 1 or self.max_epochs < 0 or self.min_epochs_before_stop < 0:
            raise ConfigError("epoch counts must be non-negative (decay_every >= 1)")
        if self.lr0 <= 0 or self.weight_decay < 0:
            raise ConfigError("lr0 must be positive and weight_decay non-negative")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ContractError("epoch must be non-negative")
    return cfg.lr0 * cfg.decay_ratio ** (epoch // cfg.decay_every)


@dataclass
class OptimizerState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Parameter]) -> "OptimizerState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], 0)


def adamw_step(params: Sequence[Parameter], state: OptimizerState, lr: float, cfg: TrainConfig) -> None:
    """One in-place AdamW update using each parameter's ``.grad``.

    Decay is decoupled (``p -= lr * wd * p``) and skipped for parameters
    with ``decay=False`` (biases and norm scales/shifts).
    """
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name or p.shape} has no gradient")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if cfg.weight_decay and getattr(p, "decay", True):
            p.data -= lr * cfg.weight_decay * p.data
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    accuracy: float

    def line(self) -> str:
        return f"epoch={self.epoch} lr={self.lr!r} loss={self.loss!r} acc={self.accuracy!r}"


@dataclass
class History:
    records: list = field(default_factory=list)
    stopped_early: bool = False

    @property
    def losses(self) -> list:
        return [r.loss for r in self.records]

    def to_text(self) -> str:
        return "".join(r.line() + "\n" for r in self.records)


class Trainer:
    """Owns one model, its optimizer state and the shuffle generator.

    The patience window opens only after ``min_epochs_before_stop`` epochs
    have completed: from then on, every epoch whose loss does not strictly
    beat the best seen so far counts toward ``patience``.
    """

    def __init__(self, model: Module, X: np.ndarray, y: np.ndarray, cfg: TrainConfig):
        if len(X) == 0:
            raise ContractError("training needs at least one segment")
        if len(X) != len(y):
            raise ContractError("X and y lengths differ")
        self.model = model
        self.X = X
        self.y = np.asarray(y, dtype=np.int64)
        self.cfg = cfg
        self.params = model.parameters()
        self.state = OptimizerState.for_params(self.params)
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.epoch = 0
        self.best = math.inf
        self.stale = 0
        self.history = History()

    @property
    def done(self) -> bool:
        return self.history.stopped_early or self.epoch >= self.cfg.max_epochs

    def run_epoch(self) -> EpochRecord:
        cfg = self.cfg
        lr = lr_at(self.epoch, cfg)
        order = self.rng.permutation(len(self.X))
        total_loss = 0.0
        correct = 0
        for bi, lo in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            for p in self.params:
                p.grad = None
            with Tape() as tape:
                logits = self.model(self.X[idx])
                loss = cross_entropy(logits, self.y[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {self.epoch}, batch {bi}")
            tape.backward(loss, self.params)
            adamw_step(self.params, self.state, lr, cfg)
            total_loss += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == self.y[idx]).sum())
        rec = EpochRecord(self.epoch, lr, total_loss / len(order), correct / len(order))
        self.history.records.append(rec)
        self.epoch += 1

        # the first epoch sets a baseline; it is not an improvement
        improved = rec.loss < self.best and math.isfinite(self.best)
        self.best = min(self.best, rec.loss)
        if self.epoch > cfg.min_epochs_before_stop:
            self.stale = 0 if improved else self.stale + 1
            if self.stale >= cfg.patience:
                self.history.stopped_early = True
        log.debug(rec.line())
        return rec

    def fit(self) -> History:
        while not self.done:
            self.run_epoch()
        return self.history

    # resumable state: model checkpoint + optimizer moments + loop counters

    def save(self, directory) -> None:
        from .model import save_checkpoint

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.model, d / "model.ckpt")
        np.savez(d / "optimizer.npz", *self.state.m, *self.state.v)
        meta = {
            "t": self.state.t,
            "epoch": self.epoch,
            "best": self.best,
            "stale": self.stale,
            "stopped_early": self.history.stopped_early,
            "rng": self.rng.bit_generator.state,
            "history": [asdict(r) for r in self.history.records],
            "config": asdict(self.cfg),
        }
        (d / "trainer.json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def resume(cls, directory, X, y, cfg: Optional[TrainConfig] = None) -> "Trainer":
        from .model import load_checkpoint

        d = Path(directory)
        meta = json.loads((d / "trainer.json").read_text())
        cfg = cfg or TrainConfig(**meta["config"])
        trainer = cls(load_checkpoint(d / "model.ckpt"), X, y, cfg)
        n = len(trainer.params)
        with np.load(d / "optimizer.npz") as arrs:
            moments = [arrs[f"arr_{i}"] for i in range(2 * n)]
        trainer.state = OptimizerState(moments[:n], moments[n:], meta["t"])
        trainer.epoch = meta["epoch"]
        trainer.best = meta["best"]
        trainer.stale = meta["stale"]
        trainer.rng.bit_generator.state = meta["rng"]
        trainer.history = History([EpochRecord(**r) for r in meta["history"]], meta["stopped_early"])
        return trainer


def train(model: Module, train_segments, cfg: TrainConfig):
    """Train ``model`` on a list of segments (or an ``(X, y)`` pair).

    Returns ``(model, history)``.
    """
    from .dataset import to_arrays

    if isinstance(train_segments, tuple):
        X, y = train_segments
    else:
        X, y, _ = to_arrays(train_segments)
    trainer = Trainer(model, X, y, cfg)
    trainer.fit()
    return model, trainer.history
