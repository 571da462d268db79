"""Central finite-difference gradient checks (64-bit)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def rel_error(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def directional_check(fn: Callable[[], Tensor], params: Sequence[Tensor],
                      rng: np.random.Generator, h: float = 1e-6) -> float:
    """Compare <grad, u> against (f(x+hu) - f(x-hu)) / 2h for a random direction u.

    ``fn`` recomputes the scalar loss from the current parameter values.
    Returns the relative error of the directional derivative.
    """
    for p in params:
        p.grad = None
    out = fn()
    backward(out, inputs=params)
    dirs = [rng.standard_normal(p.shape) for p in params]
    analytic = sum(float(np.sum(p.grad * u)) for p, u in zip(params, dirs))
    base = [p.data.copy() for p in params]
    for p, u, b in zip(params, dirs, base):
        p.data = b + h * u
    fp = fn().item()
    for p, u, b in zip(params, dirs, base):
        p.data = b - h * u
    fm = fn().item()
    for p, b in zip(params, base):
        p.data = b
    numeric = (fp - fm) / (2 * h)
    return rel_error(analytic, numeric)


def elementwise_check(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5,
                      max_entries: int = 64, rng=None) -> float:
    """Per-entry central differences on up to ``max_entries`` coordinates."""
    param.grad = None
    backward(fn(), inputs=[param])
    g = param.grad.reshape(-1)
    flat = param.data.reshape(-1)
    n = flat.size
    idx = np.arange(n) if n <= max_entries or rng is None else rng.choice(n, max_entries, replace=False)
    worst = 0.0
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = fn().item()
        flat[i] = old - h
        fm = fn().item()
        flat[i] = old
        num = (fp - fm) / (2 * h)
        err = abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-6)
        worst = max(worst, err)
    return worst
