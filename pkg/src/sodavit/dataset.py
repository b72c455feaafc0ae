"""Recordings, windowing into model-ready segments, labels, synthetic corpora.

Record file format (one file per recorded repeat, ``*.csv``)::

    # subject = 3
    # activity = 10
    # repeat = 4
    0.000,0.12,-0.98,0.05,0.01,0.00,-0.02
    0.020,...

Data rows are ``timestamp, ax, ay, az, gx, gy, gz``.  Timestamps must be
strictly increasing.  Blank lines are ignored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, SchemaError

log = logging.getLogger(__name__)

WINDOW = 224
MIN_LEN = 40
NUM_ACTIVITIES = 18

# Indices fixed by name in the source study; the rest are category placeholders.
DEFAULT_LABELS = (
    "one-hand shake",        # 0
    "contact etiquette 1",   # 1
    "hug",                   # 2
    "contact etiquette 3",   # 3
    "contact etiquette 4",   # 4
    "kiss on the forehead",  # 5
    "bow",                   # 6
    "contact daily 7",       # 7
    "contact daily 8",       # 8
    "indirect contact 9",    # 9
    "walk",                  # 10
    "daily 11",              # 11
    "daily 12",              # 12
    "daily 13",              # 13
    "daily 14",              # 14
    "daily 15",              # 15
    "drink water",           # 16
    "keystroke",             # 17
)
ALERT_CLASSES = frozenset(range(10))


@dataclass(frozen=True)
class LabelTaxonomy:
    labels: tuple = DEFAULT_LABELS
    alert_set: frozenset = ALERT_CLASSES

    def __post_init__(self):
        n = len(self.labels)
        if not set(self.alert_set) <= set(range(n)):
            raise ContractError("alert set refers to unknown class indices")

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    @property
    def silent_set(self) -> frozenset:
        return frozenset(range(self.num_classes)) - self.alert_set

    def is_alert(self, activity_id: int) -> bool:
        if not 0 <= activity_id < self.num_classes:
            raise ContractError(f"activity id {activity_id} outside [0, {self.num_classes - 1}]")
        return activity_id in self.alert_set

    def name(self, activity_id: int) -> str:
        return self.labels[activity_id]

    @classmethod
    def from_registry(cls, path) -> "LabelTaxonomy":
        """Override label names from a ``index = name`` text file."""
        labels = list(DEFAULT_LABELS)
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, name = line.partition("=")
            try:
                idx = int(key)
            except ValueError:
                idx = -1
            if not sep or not 0 <= idx < NUM_ACTIVITIES or not name.strip():
                raise SchemaError(f"bad registry entry {raw!r}", path, lineno)
            labels[idx] = name.strip()
        return cls(labels=tuple(labels))


DEFAULT_TAXONOMY = LabelTaxonomy()


def is_alert_class(activity_id: int) -> bool:
    return DEFAULT_TAXONOMY.is_alert(activity_id)


@dataclass
class SensorSample:
    subject_id: int
    activity_id: int
    repeat_idx: int
    timestamps: np.ndarray
    acc: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.acc = np.asarray(self.acc, dtype=np.float64)
        self.gyro = np.asarray(self.gyro, dtype=np.float64)
        self.validate()

    def validate(self, path=None) -> None:
        n = len(self.acc)
        if self.acc.ndim != 2 or self.acc.shape[1:] != (3,) or self.gyro.ndim != 2 or self.gyro.shape[1:] != (3,):
            raise SchemaError(f"sensor streams must be n x 3, got {self.acc.shape} and {self.gyro.shape}", path)
        if len(self.gyro) != n:
            raise SchemaError(f"accelerometer has {n} rows but gyroscope has {len(self.gyro)}", path)
        if len(self.timestamps) != n:
            raise SchemaError(f"{len(self.timestamps)} timestamps for {n} sensor rows", path)
        if n > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise SchemaError("timestamps are not strictly increasing", path)

    @property
    def key(self) -> tuple:
        return (self.subject_id, self.activity_id, self.repeat_idx)

    def __len__(self) -> int:
        return len(self.acc)


@dataclass
class Segment:
    x_a: np.ndarray
    x_g: np.ndarray
    valid_len: int
    label: int
    provenance: tuple = field(default=(0, 0, 0))  # (subject_id, repeat_idx, slice_idx)

    @property
    def subject_id(self) -> int:
        return self.provenance[0]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x_a, self.x_g], axis=1)


def window_lengths(n: int) -> list:
    """Valid lengths of the windows a recording of ``n`` rows yields."""
    full, rem = divmod(n, WINDOW)
    out = [WINDOW] * full
    if rem >= MIN_LEN:
        out.append(rem)
    return out


def _pad(block: np.ndarray) -> np.ndarray:
    out = np.zeros((WINDOW, block.shape[1]), dtype=np.float64)
    out[: len(block)] = block
    return out


def segment(sample: SensorSample) -> list:
    """Cut a recording into non-overlapping 224-row windows.

    A trailing remainder of 40..223 rows is zero-padded; shorter remainders
    (and recordings under 40 rows) are dropped.
    """
    if len(sample.acc) != len(sample.gyro):
        raise SchemaError(f"accelerometer has {len(sample.acc)} rows but gyroscope has {len(sample.gyro)}")
    out = []
    for i, vl in enumerate(window_lengths(len(sample.acc))):
        lo = i * WINDOW
        out.append(
            Segment(
                x_a=_pad(sample.acc[lo : lo + vl]),
                x_g=_pad(sample.gyro[lo : lo + vl]),
                valid_len=vl,
                label=sample.activity_id,
                provenance=(sample.subject_id, sample.repeat_idx, i),
            )
        )
    return out


def segment_all(samples: Iterable[SensorSample]) -> list:
    return [seg for s in samples for seg in segment(s)]


def to_arrays(segments: Sequence[Segment]):
    """Stack segments into ``X[N, 224, 6]``, ``y[N]`` and ``subjects[N]``."""
    if not segments:
        return np.zeros((0, WINDOW, 6)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    X = np.stack([s.stacked() for s in segments])
    y = np.array([s.label for s in segments], dtype=np.int64)
    subj = np.array([s.subject_id for s in segments], dtype=np.int64)
    return X, y, subj


# --- record files ------------------------------------------------------------

_HEADER_KEYS = ("subject", "activity", "repeat")


def sample_filename(s: SensorSample) -> str:
    return f"s{s.subject_id:02d}_a{s.activity_id:02d}_r{s.repeat_idx:02d}.csv"


def write_sample(s: SensorSample, path) -> None:
    lines = [f"# subject = {s.subject_id}", f"# activity = {s.activity_id}", f"# repeat = {s.repeat_idx}"]
    block = np.column_stack([s.timestamps, s.acc, s.gyro])
    lines.extend(",".join(repr(float(v)) for v in row) for row in block)
    Path(path).write_text("\n".join(lines) + "\n")


def read_sample(path) -> SensorSample:
    path = Path(path)
    meta = {}
    rows = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, val = line[1:].partition("=")
            key = key.strip()
            if not sep or key not in _HEADER_KEYS:
                raise SchemaError(f"unrecognised header line {raw!r}", path, lineno)
            try:
                meta[key] = int(val)
            except ValueError:
                raise SchemaError(f"{key} must be an integer", path, lineno) from None
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise SchemaError(f"expected 7 comma-separated values, got {len(parts)}", path, lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise SchemaError(f"non-numeric value in row {raw!r}", path, lineno) from None
        if not all(np.isfinite(vals)):
            raise SchemaError("non-finite value in row", path, lineno)
        if rows and vals[0] <= rows[-1][0]:
            raise SchemaError("timestamps are not strictly increasing", path, lineno)
        rows.append(vals)
    missing = [k for k in _HEADER_KEYS if k not in meta]
    if missing:
        raise SchemaError(f"missing header field(s): {', '.join(missing)}", path)
    if not 0 <= meta["activity"] < NUM_ACTIVITIES:
        raise SchemaError(f"activity {meta['activity']} outside [0, {NUM_ACTIVITIES - 1}]", path)
    block = np.asarray(rows, dtype=np.float64).reshape(-1, 7)
    return SensorSample(meta["subject"], meta["activity"], meta["repeat"], block[:, 0], block[:, 1:4], block[:, 4:7])


def load_dataset(path) -> list:
    """Parse every ``*.csv`` record under ``path``, ordered by (subject, activity, repeat)."""
    root = Path(path)
    if not root.is_dir():
        raise SchemaError("dataset directory does not exist", root)
    samples = [read_sample(f) for f in sorted(root.glob("*.csv"))]
    seen = {}
    for s in samples:
        if s.key in seen:
            raise SchemaError(f"duplicate record for subject/activity/repeat {s.key}")
        seen[s.key] = s
    return sorted(samples, key=lambda s: s.key)


def save_dataset(samples: Iterable[SensorSample], path) -> int:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    n = 0
    for s in samples:
        write_sample(s, root / sample_filename(s))
        n += 1
    return n


# --- synthetic corpora -----------------------------------------------------------

SYNTH_RATE_HZ = 50.0
SYNTH_LEN_RANGE = (30, 520)  # inclusive; spans discard, padded, and multi-window cases


@dataclass(frozen=True)
class SynthSpec:
    """Corpus shape.  ``activity_ids`` overrides ``activities`` (which means ids 0..n-1)."""

    subjects: int = 10
    activities: int = NUM_ACTIVITIES
    repeats: int = 10
    noise: float = 0.05
    activity_ids: Optional[tuple] = None

    @property
    def ids(self) -> tuple:
        return tuple(self.activity_ids) if self.activity_ids is not None else tuple(range(self.activities))


def activity_signature(activity_id: int, base_seed: int = 0) -> dict:
    """Per-class motion parameters: DC offsets and two tones per channel.

    Depends only on the activity id (and a fixed base seed), never on the
    corpus seed, so the same class looks the same across generated corpora.
    """
    rng = np.random.default_rng([base_seed, 7919, activity_id])
    return {
        "offset": rng.uniform(-1.0, 1.0, 6),
        "freq": rng.uniform(0.3, 6.0, (6, 2)),
        "amp": rng.uniform(0.2, 1.0, (6, 2)),
    }


def synth_generate(spec: SynthSpec, seed: int = 0) -> list:
    """Deterministic synthetic corpus of ``subjects x activities x repeats`` recordings.

    Each channel is the activity's DC offset plus two sinusoids with random
    phase, scaled by a per-subject gain, shifted by a small per-subject
    offset, plus Gaussian noise.  Lengths are uniform over
    ``SYNTH_LEN_RANGE``.
    """
    ids = spec.ids
    if len(set(ids)) < 2:
        raise ContractError("synthetic corpus needs at least two activities")
    if len(set(ids)) != len(ids) or not all(0 <= a < NUM_ACTIVITIES for a in ids):
        raise ContractError(f"activity ids must be distinct and lie in [0, {NUM_ACTIVITIES - 1}]")
    rng = np.random.default_rng(seed)
    sigs = {a: activity_signature(a) for a in ids}
    subj_offset = rng.normal(0.0, 0.05, (spec.subjects, 6))
    subj_gain = rng.uniform(0.9, 1.1, spec.subjects)
    lo, hi = SYNTH_LEN_RANGE
    out = []
    for s in range(spec.subjects):
        for a in ids:
            sig = sigs[a]
            for r in range(spec.repeats):
                n = int(rng.integers(lo, hi + 1))
                t = np.arange(n) / SYNTH_RATE_HZ
                phase = rng.uniform(0, 2 * np.pi, (6, 2))
                waves = sig["amp"][None] * np.sin(2 * np.pi * sig["freq"][None] * t[:, None, None] + phase[None])
                x = subj_gain[s] * (sig["offset"] + waves.sum(axis=2)) + subj_offset[s]
                x = x + rng.normal(0.0, spec.noise, x.shape)
                out.append(SensorSample(s, a, r, t, x[:, :3], x[:, 3:]))
    return out


def mean_spectrum(samples: Sequence[SensorSample], nfft: int = 64) -> np.ndarray:
    """Average magnitude spectrum per channel over fixed-size frames, ``(6, nfft//2+1)``."""
    acc = np.zeros((6, nfft // 2 + 1))
    count = 0
    for s in samples:
        x = np.concatenate([s.acc, s.gyro], axis=1)
        for lo in range(0, len(x) - nfft + 1, nfft):
            acc += np.abs(np.fft.rfft(x[lo : lo + nfft], axis=0)).T
            count += 1
    if count == 0:
        raise ContractError(f"no recording has {nfft} rows")
    return acc / count


def spectral_distance(a: Sequence[SensorSample], b: Sequence[SensorSample], nfft: int = 64) -> float:
    return float(np.linalg.norm(mean_spectrum(a, nfft) - mean_spectrum(b, nfft)))
