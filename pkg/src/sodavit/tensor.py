"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape`.  With no
tape active nothing is recorded, which is how inference runs::

    with Tape() as tape:
        loss = cross_entropy(model(x), y)
    tape.backward(loss)

Broadcasting is limited to one case: in :func:`add`/:func:`sub` the second
operand's shape may be a trailing suffix of the first's (bias over rows,
position embedding over a batch).  Anything else is a :class:`ShapeError`.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

DTYPE = np.float64

_DEBUG = False
_TAPES: list["Tape"] = []


def set_debug(flag: bool) -> None:
    """Toggle the non-finite check on every forward op output."""
    global _DEBUG
    _DEBUG = bool(flag)


def debug_enabled() -> bool:
    return _DEBUG


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=DTYPE)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as ops execute, so inputs always precede the ops that
    consume them.  A tape supports exactly one :meth:`backward`; call
    :meth:`reset` to reuse it.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> None:
        if self.consumed:
            raise ContractError("tape already consumed by backward(); call reset() first")
        self.nodes.append((out, inputs, backward_fn))

    def reset(self) -> None:
        self.nodes = []
        self.consumed = False

    def backward(self, loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
        """Populate ``.grad`` on every leaf tensor that requires grad.

        Leaves reached by the tape receive dloss/dleaf, accumulated onto any
        existing ``.grad``.  Tensors in ``params`` that the loss does not
        depend on get a zero gradient.  Intermediate tensors keep
        ``grad=None``.
        """
        if self.consumed:
            raise ContractError("backward() called twice on the same tape without reset()")
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = set()
        leaves: dict[int, Tensor] = {}
        for out, inputs, fn in reversed(self.nodes):
            produced.add(id(out))
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = fn(g)
            for t, gi in zip(inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    leaves[key] = t

        if loss.requires_grad and id(loss) in grads and id(loss) not in produced:
            leaves[id(loss)] = loss
        for key, t in leaves.items():
            if key in produced or key not in grads:
                continue
            g = grads[key]
            t.grad = g.copy() if t.grad is None else t.grad + g
        if params is not None:
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
        self.nodes = []


def backward(loss: Tensor, tape: Tape, params: Optional[Iterable[Tensor]] = None) -> None:
    tape.backward(loss, params)


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(out_data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise NumericError("forward op produced non-finite values from finite inputs")
    needs = any(t.requires_grad for t in inputs)
    tape = _TAPES[-1] if _TAPES else None
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.name = None
    out.requires_grad = needs and tape is not None
    if out.requires_grad:
        tape.record(out, inputs, backward_fn)
    return out


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    return g


def _check_suffix(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a, b, "add")
    sb = b.shape
    return _make(a.data + b.data, (a, b), lambda g: (g, _sum_to(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a, b, "sub")
    sb = b.shape
    return _make(a.data - b.data, (a, b), lambda g: (g, -_sum_to(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either a 2-D matrix shared across all leading axes of ``a``
    (the weight case) or has exactly ``a``'s leading axes (batched case).
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        k, c = bd.shape

        def back(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, k).T @ g.reshape(-1, c)
            return ga, gb

        return _make(ad @ bd, (a, b), back)
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ for {a.shape} @ {b.shape}")

    def back_batched(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(ad @ bd, (a, b), back_batched)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return _make(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, idx) -> Tensor:
    src = a.shape

    def back(g):
        full = np.zeros(src, dtype=DTYPE)
        full[idx] = g
        return (full,)

    out = a.data[idx]
    if out.ndim == 0:
        out = np.asarray(out, dtype=DTYPE)
    return _make(np.array(out, dtype=DTYPE, copy=True), (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    return _make(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def expand(a: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of ``a`` along a new leading axis."""
    out = np.broadcast_to(a.data, (n,) + a.shape).copy()
    return _make(out, (a,), lambda g: (g.sum(axis=0),))


def tsum(a: Tensor) -> Tensor:
    src = a.shape
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.full(src, g, dtype=DTYPE),))


def mean(a: Tensor) -> Tensor:
    src, n = a.shape, a.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.full(src, g / n, dtype=DTYPE),))


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    h = x.shape[-1]
    if h < 2:
        raise ContractError("layer_norm needs at least 2 features per row")
    if gamma.shape != (h,) or beta.shape != (h,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape}/beta {beta.shape} vs rows of width {h}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def back(g):
        dxhat = g * gd
        dx = inv / h * (
            h * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        g2 = g.reshape(-1, h)
        return dx, (g2 * xhat.reshape(-1, h)).sum(axis=0), g2.sum(axis=0)

    return _make(out, (x, gamma, beta), back)


_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_K * xd * (1.0 + _GELU_C * x2))
    out = 0.5 * xd * (1.0 + t)

    def back(g):
        dt = (1.0 - t * t) * _GELU_K * (1.0 + 3.0 * _GELU_C * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * dt),)

    return _make(out, (x,), back)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of ``logits[B, K]`` against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _make(np.asarray(loss), (logits,), back)
