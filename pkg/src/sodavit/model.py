"""ViT classifier over dual-sensor IMU windows, plus its cost accounting.

Each 224-sample window of accelerometer and gyroscope readings is cut into
``C = L / clip_len`` clips.  Both sensors have their own linear projection;
the two clip embeddings and a learned position embedding are summed into one
token per clip.  A learned class token (plus its own position embedding) is
prepended, the sequence goes through the encoder stack, and the class-token
row feeds a two-layer MLP head.
"""

from __future__ import annotations

import dataclasses
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import (
    CheckpointConfigMismatch,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    ShapeError,
)
from .layers import EncoderBlock, LayerNorm, Linear, Module, Parameter
from .tensor import Tensor, add, concat, expand, gelu, getitem, reshape

NUM_CLASSES = 18
INPUT_LEN = 224


@dataclass(frozen=True)
class ModelConfig:
    blocks: int
    hidden: int
    heads: int
    clip_len: int
    input_len: int = INPUT_LEN
    sensor_channels: int = 3
    num_classes: int = NUM_CLASSES
    mlp_ratio: int = 4

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{f.name} must be a positive integer, got {v!r}")
        if self.input_len % self.clip_len:
            raise ConfigError(f"input length {self.input_len} not divisible by clip length {self.clip_len}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden size {self.hidden} not divisible by {self.heads} heads")

    @property
    def num_clips(self) -> int:
        return self.input_len // self.clip_len

    @property
    def head_hidden(self) -> int:
        return self.hidden

    def to_kv(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_kv(cls, text: str) -> "ModelConfig":
        values = {}
        names = {f.name for f in dataclasses.fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key = key.strip()
            if not sep or key not in names:
                raise ConfigError(f"line {lineno}: unrecognised config entry {raw!r}")
            try:
                values[key] = int(val.strip())
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} must be an integer") from None
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        return cls.from_kv(Path(path).read_text())


SCALES = {"es": (2, 128, 4), "ms": (4, 256, 4), "s": (8, 512, 8)}
CLIP_LENGTHS = (8, 16, 32)
PRESET_NAMES = tuple(f"vit-{s}/{c}" for s in SCALES for c in CLIP_LENGTHS)

# (parameters in millions, FLOPs in millions) as reported for the ViT rows
REPORTED_COSTS = {
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


def preset(name: str) -> ModelConfig:
    """``'vit-ms/8'``, ``'MS/8'`` and ``'ms8'`` all name the same preset."""
    m = re.fullmatch(r"(?:vit-)?(es|ms|s)/?(\d+)", name.strip().lower())
    if not m or m.group(1) not in SCALES:
        raise ConfigError(f"unknown model preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    blocks, hidden, heads = SCALES[m.group(1)]
    return ModelConfig(blocks=blocks, hidden=hidden, heads=heads, clip_len=int(m.group(2)))


class ViTModel(Module):
    def __init__(self, config: ModelConfig, rng: Optional[np.random.Generator] = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.config = config
        h, C = config.hidden, config.num_clips
        clip_in = config.sensor_channels * config.clip_len
        self.proj_acc = Linear(clip_in, h, rng)
        self.proj_gyro = Linear(clip_in, h, rng)
        self.pos = Parameter(rng.normal(0.0, 0.02, (C, h)), name="pos")
        self.cls_token = Parameter(rng.normal(0.0, 0.02, (h,)), name="cls_token")
        self.cls_pos = Parameter(rng.normal(0.0, 0.02, (h,)), name="cls_pos")
        self.encoder = [
            EncoderBlock(h, config.heads, config.mlp_ratio, rng) for _ in range(config.blocks)
        ]
        self.final_norm = LayerNorm(h)
        self.head_fc1 = Linear(h, config.head_hidden, rng)
        self.head_fc2 = Linear(config.head_hidden, config.num_classes, rng)

    def _clips(self, x: np.ndarray) -> Tensor:
        # (B, L, 3) -> (B, C, 3*clip_len); each timestep keeps its 3 axes contiguous
        cfg = self.config
        b = x.shape[0]
        return Tensor(np.ascontiguousarray(x).reshape(b, cfg.num_clips, cfg.sensor_channels * cfg.clip_len))

    def embed_batch(self, x_a: np.ndarray, x_g: np.ndarray) -> Tensor:
        cfg = self.config
        want = (cfg.input_len, cfg.sensor_channels)
        if x_a.shape[1:] != want or x_g.shape != x_a.shape:
            raise ShapeError(f"expected sensor windows of shape (B, {want[0]}, {want[1]}), got {x_a.shape} / {x_g.shape}")
        tokens = add(self.proj_acc(self._clips(x_a)), self.proj_gyro(self._clips(x_g)))
        tokens = add(tokens, self.pos)
        cls = reshape(add(self.cls_token, self.cls_pos), (1, cfg.hidden))
        cls = expand(cls, x_a.shape[0])
        return concat([cls, tokens], axis=1)

    def forward(self, batch) -> Tensor:
        x = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
        cfg = self.config
        nch = 2 * cfg.sensor_channels
        if x.ndim != 3 or x.shape[1:] != (cfg.input_len, nch):
            raise ShapeError(f"forward expects (B, {cfg.input_len}, {nch}), got {x.shape}")
        bad = ~np.isfinite(x).reshape(x.shape[0], -1).all(axis=1)
        if bad.any():
            raise DataError(f"non-finite sensor values in batch index {int(np.flatnonzero(bad)[0])}")
        z = self.embed_batch(x[..., : cfg.sensor_channels], x[..., cfg.sensor_channels:])
        for block in self.encoder:
            z = block(z)
        z = self.final_norm(z)
        return self.head_fc2(gelu(self.head_fc1(getitem(z, (slice(None), 0)))))


def embed(x_a, x_g, model: ViTModel) -> Tensor:
    """Token matrix ``(C+1) x h`` for one window; row 0 is the class token."""
    x_a = np.asarray(x_a, dtype=np.float64)
    x_g = np.asarray(x_g, dtype=np.float64)
    if x_a.ndim != 2:
        raise ShapeError(f"embed expects an L x 3 window, got {x_a.shape}")
    return getitem(model.embed_batch(x_a[None], x_g[None]), 0)


def forward(batch, model: ViTModel) -> Tensor:
    return model(batch)


def predict(model: ViTModel, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Logits for ``x[N, L, 6]`` in chunks, without recording a tape."""
    out = [model(x[i : i + batch_size]).data for i in range(0, len(x), batch_size)]
    if not out:
        return np.zeros((0, model.config.num_classes))
    return np.concatenate(out, axis=0)


def count_params(config: ModelConfig) -> int:
    """Closed-form parameter count.

    With h hidden, C clips, clip input width i = 3*clip_len, r = mlp ratio,
    K classes and B blocks::

        2(i h + h)                      two sensor projections
        + C h + 2h                      clip positions, class token, class position
        + B (4(h^2 + h) + 4h            QKVO + two norms
             + 2 r h^2 + r h + h)       MLP
        + 2h                            final norm
        + (h^2 + h) + (h K + K)         head
    """
    h, C, K, r = config.hidden, config.num_clips, config.num_classes, config.mlp_ratio
    i = config.sensor_channels * config.clip_len
    block = 4 * (h * h + h) + 4 * h + 2 * r * h * h + r * h + h
    return 2 * (i * h + h) + C * h + 2 * h + config.blocks * block + 2 * h + (h * h + h) + (h * K + K)


def count_flops(config: ModelConfig) -> int:
    """Multiply-accumulates of one single-window forward pass, matmuls only."""
    h, C, K, r = config.hidden, config.num_clips, config.num_classes, config.mlp_ratio
    n = C + 1
    i = config.sensor_channels * config.clip_len
    proj = 2 * C * i * h
    attn = 4 * n * h * h + 2 * n * n * h
    mlp = 2 * n * h * r * h
    head = h * h + h * K
    return proj + config.blocks * (attn + mlp) + head


# --- checkpoints -----------------------------------------------------------
#
# Layout (all little-endian):
#   8 bytes   magic b"SODAVIT\0"
#   uint32    format version
#   uint32    header length N
#   N bytes   UTF-8 "key = value" lines: the ModelConfig plus "n_params"
#   payload   float64 values of every parameter, in named_parameters() order,
#             each flattened row-major

MAGIC = b"SODAVIT\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


def _header(model: ViTModel) -> bytes:
    return (model.config.to_kv() + f"n_params = {count_params(model.config)}\n").encode()


def save_checkpoint(model: ViTModel, path: Union[str, Path]) -> None:
    header = _header(model)
    payload = b"".join(p.data.astype("<f8").tobytes() for p in model.parameters())
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path: Union[str, Path], expect: Optional[ModelConfig] = None) -> ViTModel:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        if raw and not MAGIC.startswith(raw[: len(MAGIC)]):
            raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
        raise CheckpointTruncatedError(f"{path}: file too short for checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(raw) < start + hlen:
        raise CheckpointTruncatedError(f"{path}: truncated header")
    lines = raw[start : start + hlen].decode("utf-8", errors="replace").splitlines()
    n_params = None
    cfg_lines = []
    for line in lines:
        if line.startswith("n_params"):
            n_params = int(line.partition("=")[2])
        else:
            cfg_lines.append(line)
    try:
        config = ModelConfig.from_kv("\n".join(cfg_lines))
    except ConfigError as exc:
        raise CheckpointFormatError(f"{path}: bad config header: {exc}") from None
    if n_params != count_params(config):
        raise CheckpointConfigMismatch(f"{path}: header declares {n_params} parameters, config implies {count_params(config)}")
    if expect is not None and expect != config:
        raise CheckpointConfigMismatch(f"{path}: checkpoint holds {config}, caller expected {expect}")

    payload = raw[start + hlen :]
    need = 8 * n_params
    if len(payload) < need:
        raise CheckpointTruncatedError(f"{path}: payload has {len(payload)} bytes, expected {need}")
    if len(payload) > need:
        raise CheckpointFormatError(f"{path}: {len(payload) - need} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    model = ViTModel(config)
    offset = 0
    for p in model.parameters():
        p.data = values[offset : offset + p.size].reshape(p.shape).copy()
        offset += p.size
    return model
