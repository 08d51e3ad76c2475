"""Central finite-difference gradient checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def numerical_grad(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """d f() / d t by central differences; ``f`` must rebuild its graph on every call."""
    g = np.zeros_like(t.values)
    it = np.nditer(t.values, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = t.values[i]
        t.values[i] = old + eps
        hi = f().item()
        t.values[i] = old - eps
        lo = f().item()
        t.values[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Worst relative error between backprop and finite differences over ``params``."""
    for p in params:
        p.grad = None
    ad.backward(f())
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.values)
        worst = max(worst, max_rel_error(analytic, numerical_grad(f, p, eps)))
    return worst
