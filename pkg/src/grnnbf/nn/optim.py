"""Adam and global gradient-norm clipping."""

from __future__ import annotations

import numpy as np

__all__ = ["Adam", "clip_grad_norm", "GradientError"]


class GradientError(FloatingPointError):
    pass


def _check_finite(params, names=None):
    for i, p in enumerate(params):
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            label = (names[i] if names else None) or p.name or f"#{i}"
            raise GradientError(f"non-finite gradient in parameter {label}")


def clip_grad_norm(params, max_norm: float = 10.0, names=None) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    params = [p for p in params if p.grad is not None]
    _check_finite(params, names)
    total = float(np.sqrt(sum(np.sum(p.grad.astype(np.float64) ** 2) for p in params)))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return total


class Adam:
    """Adam with bias correction; moment buffers are created on first use."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8, names=None):
        self.params = list(params)
        self.names = list(names) if names is not None else [p.name for p in self.params]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [None] * len(self.params)
        self.v = [None] * len(self.params)

    def step(self) -> None:
        _check_finite(self.params, self.names)
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.step_count
        c2 = 1 - b2**self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.m[i] is None:
                self.m[i] = np.zeros_like(p.data)
                self.v[i] = np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            update = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state(self) -> dict:
        """Moment buffers keyed by parameter name plus the step counter."""
        out = {}
        for name, m, v in zip(self.names, self.m, self.v):
            if m is not None:
                out[f"adam.m.{name}"] = m
                out[f"adam.v.{name}"] = v
        return out

    def load_state(self, arrays: dict, step_count: int) -> None:
        self.step_count = int(step_count)
        for i, name in enumerate(self.names):
            key = f"adam.m.{name}"
            if key in arrays:
                self.m[i] = np.asarray(arrays[key], dtype=self.params[i].data.dtype)
                self.v[i] = np.asarray(arrays[f"adam.v.{name}"], dtype=self.params[i].data.dtype)
