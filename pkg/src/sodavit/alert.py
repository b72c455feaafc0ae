"""Turning classifier output into ALERT / SILENT decisions, offline and streaming."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from .dataset import DEFAULT_TAXONOMY, MIN_LEN, WINDOW, LabelTaxonomy
from .errors import ConfigError, InferenceError
from .model import ViTModel


@dataclass(frozen=True)
class AlertDecision:
    start: int
    predicted: int
    is_alert: bool
    confidence: float
    label: str = ""
    valid_len: int = WINDOW
    notify: bool = True

    @property
    def status(self) -> str:
        return "ALERT" if self.is_alert and self.notify else "SILENT"

    def to_json(self) -> str:
        return json.dumps(
            {
                "start": self.start,
                "class": self.predicted,
                "label": self.label,
                "status": self.status,
                "confidence": round(self.confidence, 6),
                "valid_len": self.valid_len,
            }
        )


def decide(logits, taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY, start: int = 0, threshold: float = 0.0, valid_len: int = WINDOW) -> AlertDecision:
    """Argmax class (lowest index on ties) and its softmax probability.

    ``is_alert`` reflects class membership only.  ``notify`` additionally
    requires ``confidence >= threshold``; the default threshold of 0 never
    suppresses.
    """
    z = np.asarray(getattr(logits, "data", logits), dtype=np.float64).reshape(-1)
    if z.shape != (taxonomy.num_classes,):
        raise InferenceError(f"expected {taxonomy.num_classes} logits, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InferenceError("non-finite logits")
    k = int(np.argmax(z))
    e = np.exp(z - z[k])
    conf = float(1.0 / e.sum())
    alert = taxonomy.is_alert(k)
    return AlertDecision(start, k, alert, conf, taxonomy.name(k), valid_len, conf >= threshold)


class AlertEngine:
    """Buffers a stream of 6-channel rows and scores fixed windows.

    Windows start every ``hop`` rows (default: non-overlapping).  On close, the
    first unscored partial window is zero-padded and scored if it holds at
    least 40 rows.
    """

    def __init__(self, model: ViTModel, taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY, hop: Optional[int] = None, threshold: float = 0.0):
        hop = WINDOW if hop is None else hop
        if not 1 <= hop <= WINDOW:
            raise ConfigError(f"hop must lie in [1, {WINDOW}]")
        self.model = model
        self.taxonomy = taxonomy
        self.hop = hop
        self.threshold = threshold
        self._buf = np.zeros((0, 6))
        self._offset = 0  # stream index of _buf[0]
        self._chunks = []

    def _score(self, window: np.ndarray, start: int, valid_len: int) -> AlertDecision:
        logits = self.model(window[None]).data[0]
        return decide(logits, self.taxonomy, start, self.threshold, valid_len)

    def push(self, row) -> list:
        """Add one row; returns decisions for windows completed by it."""
        self._chunks.append(np.asarray(row, dtype=np.float64).reshape(6))
        if len(self._buf) + len(self._chunks) < WINDOW:
            return []
        self._buf = np.concatenate([self._buf, np.stack(self._chunks)])
        self._chunks = []
        out = []
        while len(self._buf) >= WINDOW:
            out.append(self._score(self._buf[:WINDOW], self._offset, WINDOW))
            self._buf = self._buf[self.hop :]
            self._offset += self.hop
        return out

    def close(self) -> list:
        if self._chunks:
            self._buf = np.concatenate([self._buf, np.stack(self._chunks)])
            self._chunks = []
        n = len(self._buf)
        out = []
        if n >= MIN_LEN:
            window = np.zeros((WINDOW, 6))
            window[:n] = self._buf
            out.append(self._score(window, self._offset, n))
        self._buf = np.zeros((0, 6))
        return out


def stream_infer(rows: Iterable, model: ViTModel, taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY, hop: Optional[int] = None, threshold: float = 0.0) -> Iterator[AlertDecision]:
    engine = AlertEngine(model, taxonomy, hop, threshold)
    for row in rows:
        yield from engine.push(row)
    yield from engine.close()


def parse_rows(lines: Iterable[str]) -> Iterator[np.ndarray]:
    """Read ``timestamp, ax, ay, az, gx, gy, gz`` lines; ``#`` comments and blanks skipped."""
    from .errors import SchemaError

    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 7:
            raise SchemaError(f"expected 7 values, got {len(parts)}", "<stream>", lineno)
        try:
            vals = np.array([float(p) for p in parts[1:]])
        except ValueError:
            raise SchemaError(f"non-numeric value in {raw.strip()!r}", "<stream>", lineno) from None
        if not np.all(np.isfinite(vals)):
            raise SchemaError("non-finite value", "<stream>", lineno)
        yield vals
