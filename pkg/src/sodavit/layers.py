"""Transformer encoder building blocks on top of :mod:`sodavit.tensor`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import (
    Tensor,
    add,
    gelu,
    layer_norm,
    matmul,
    reshape,
    scale,
    softmax_rows,
    transpose,
)

LN_EPS = 1e-5


class Parameter(Tensor):
    """Trainable tensor.  ``decay`` marks whether AdamW weight decay applies."""

    __slots__ = ("decay",)

    def __init__(self, data, name=None, decay=True):
        super().__init__(data, requires_grad=True, name=name)
        self.decay = decay


class Module:
    """Minimal container; parameter order follows attribute definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + key + ".")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(n_in)
        self.W = Parameter(rng.uniform(-bound, bound, (n_in, n_out)), name="W")
        self.b = Parameter(rng.uniform(-bound, bound, (n_out,)), name="b", decay=False)

    def forward(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.W), self.b)


class LayerNorm(Module):
    def __init__(self, h: int):
        self.gamma = Parameter(np.ones(h), name="gamma", decay=False)
        self.beta = Parameter(np.zeros(h), name="beta", decay=False)

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, LN_EPS)


def attention_single(Q: Tensor, K: Tensor, V: Tensor, d: int) -> Tensor:
    """softmax(Q Kᵀ / sqrt(d)) V over the last two axes."""
    if d <= 0:
        raise ContractError("attention width d must be positive")
    if not (Q.shape == K.shape == V.shape):
        raise ContractError(f"Q/K/V shapes differ: {Q.shape}, {K.shape}, {V.shape}")
    if Q.shape[-1] != d:
        raise ContractError(f"d={d} does not match trailing dimension {Q.shape[-1]}")
    scores = scale(matmul(Q, transpose(K)), 1.0 / math.sqrt(d))
    return matmul(softmax_rows(scores), V)


class MultiHeadAttention(Module):
    def __init__(self, h: int, heads: int, rng: np.random.Generator):
        if heads < 1 or h % heads:
            raise ConfigError(f"hidden size {h} is not divisible by {heads} heads")
        self.h = h
        self.heads = heads
        self.Wq = Linear(h, h, rng)
        self.Wk = Linear(h, h, rng)
        self.Wv = Linear(h, h, rng)
        self.Wo = Linear(h, h, rng)

    def _split(self, x: Tensor) -> Tensor:
        # (..., n, h) -> (..., m, n, h/m)
        lead, n = x.shape[:-2], x.shape[-2]
        x = reshape(x, lead + (n, self.heads, self.h // self.heads))
        k = len(lead)
        return transpose(x, tuple(range(k)) + (k + 1, k, k + 2))

    def _merge(self, x: Tensor) -> Tensor:
        lead = x.shape[:-3]
        k = len(lead)
        n = x.shape[-2]
        x = transpose(x, tuple(range(k)) + (k + 1, k, k + 2))
        return reshape(x, lead + (n, self.h))

    def forward(self, U: Tensor) -> Tensor:
        d = self.h // self.heads
        q = self._split(self.Wq(U))
        k = self._split(self.Wk(U))
        v = self._split(self.Wv(U))
        return self.Wo(self._merge(attention_single(q, k, v, d)))


def attention_multi(U: Tensor, params: MultiHeadAttention) -> Tensor:
    return params(U)


class MLP(Module):
    def __init__(self, h: int, ratio: int, rng: np.random.Generator):
        self.fc1 = Linear(h, ratio * h, rng)
        self.fc2 = Linear(ratio * h, h, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class EncoderBlock(Module):
    """Pre-norm block: x + MSA(Norm(x)), then y + MLP(Norm(y))."""

    def __init__(self, h: int, heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(h)
        self.attn = MultiHeadAttention(h, heads, rng)
        self.norm2 = LayerNorm(h)
        self.mlp = MLP(h, mlp_ratio, rng)

    def forward(self, x: Tensor) -> Tensor:
        y = add(x, self.attn(self.norm1(x)))
        return add(y, self.mlp(self.norm2(y)))


def encoder_block_forward(x: Tensor, block: EncoderBlock) -> Tensor:
    return block(x)
