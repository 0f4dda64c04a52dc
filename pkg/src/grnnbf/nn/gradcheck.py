"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

__all__ = ["numeric_grad", "max_relative_error", "check_gradients"]


def numeric_grad(fn, param, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``param.data``.

    With ``indices`` only those flat positions are perturbed; other entries
    of the result are NaN.
    """
    flat = param.data.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + h
        plus = float(fn().data)
        flat[i] = orig - h
        minus = float(fn().data)
        flat[i] = orig
        grad[i] = (plus - minus) / (2 * h)
    return grad.reshape(param.data.shape)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    keep = ~np.isnan(n)
    a, n = a[keep], n[keep]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(fn, params, h: float = 1e-5, max_entries: int | None = None, rng=None) -> float:
    """Worst relative error between backprop and central differences.

    ``fn`` builds a fresh scalar Tensor from the current parameter values.
    """
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [None if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        if a is None:
            a = np.zeros_like(p.data)
        idx = None
        if max_entries is not None and p.data.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(p.data.size, size=max_entries, replace=False)
        num = numeric_grad(fn, p, h, idx)
        worst = max(worst, max_relative_error(a, num))
    return worst
