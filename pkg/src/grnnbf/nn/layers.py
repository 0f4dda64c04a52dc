"""Parameter containers and the layers the separation models are built from."""

from __future__ import annotations

import numpy as np

from . import functional as Fn
from .tensor import Tensor, get_dtype

__all__ = ["Parameter", "Module", "Affine", "PReLU", "LayerNorm", "Conv1d", "GRU", "orthogonal"]


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.asarray(data, dtype=get_dtype()), requires_grad=True, name=name)


class Module:
    """Minimal parameter registry: attributes that are Parameters, Modules or
    lists of Modules are walked in definition order."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict:
            missing = set(params) - set(state)
            extra = set(state) - set(params)
            if missing or extra:
                raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            if name in state:
                value = np.asarray(state[name])
                if value.shape != p.data.shape:
                    raise ValueError(f"{name}: shape {value.shape} != {p.data.shape}")
                p.data = value.astype(p.data.dtype)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class Affine(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, zero: bool = False):
        shape = (in_dim, out_dim)
        self.weight = Parameter(np.zeros(shape) if zero else _uniform(rng, in_dim, shape))
        self.bias = Parameter(np.zeros(out_dim) if zero else _uniform(rng, in_dim, out_dim))

    def forward(self, x):
        return Fn.affine(x, self.weight, self.bias)


class PReLU(Module):
    def __init__(self, channels: int, init: float = 0.25):
        self.slope = Parameter(np.full(channels, init))

    def forward(self, x):
        return Fn.prelu(x, self.slope)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return Fn.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv1d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 dilation: int = 1, causal: bool = False):
        if kernel < 1 or kernel % 2 == 0:
            raise ValueError(f"kernel size must be a positive odd integer, got {kernel}")
        fan_in = kernel * in_ch
        self.weight = Parameter(_uniform(rng, fan_in, (kernel, in_ch, out_ch)))
        self.bias = Parameter(_uniform(rng, fan_in, out_ch))
        self.dilation = dilation
        self.causal = causal

    def forward(self, x):
        return Fn.dilated_conv1d(x, self.weight, self.bias, self.dilation, self.causal)


class GRULayer(Module):
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.w_ih = Parameter(_uniform(rng, hidden, (in_dim, 3 * hidden)))
        self.w_hh = Parameter(np.concatenate([orthogonal(rng, hidden) for _ in range(3)], axis=1))
        self.b_ih = Parameter(np.zeros(3 * hidden))
        self.b_hh = Parameter(np.zeros(3 * hidden))

    def forward(self, x, h0=None):
        return Fn.gru_layer(x, self.w_ih, self.w_hh, self.b_ih, self.b_hh, h0)


class GRU(Module):
    """Stack of unidirectional GRU layers over (B, T, D) sequences."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator, num_layers: int = 1):
        self.layers = [GRULayer(in_dim if i == 0 else hidden, hidden, rng) for i in range(num_layers)]
        self.hidden = hidden

    def forward(self, x, h0=None):
        for i, layer in enumerate(self.layers):
            x = layer(x, h0 if i == 0 else None)
        return x
