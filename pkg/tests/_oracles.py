"""Independent checking helpers: finite differences, brute-force references."""

import numpy as np

from sodavit.tensor import Tape, Tensor


def numerical_grad(f, arrays, index, step=1e-5):
    """Central-difference derivative of scalar ``f()`` w.r.t. ``arrays[index]``, element by element."""
    x = arrays[index]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        hi = f()
        x[i] = old - step
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * step)
    return g


def tape_grads(build, arrays):
    """Gradients of ``build(*tensors)`` (a scalar) w.r.t. each array."""
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = build(*ts)
    tape.backward(out, ts)
    return [t.grad for t in ts]


def rel_err(a, b, floor=1e-4):
    """max |a - b| relative to the larger max-magnitude of the two.

    Gradients whose magnitude is below ``floor`` are compared against
    ``floor`` instead, so finite-difference noise on a near-zero gradient
    does not read as a large relative error.
    """
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)
