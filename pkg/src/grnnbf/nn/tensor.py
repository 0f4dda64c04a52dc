"""Reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` records the op that produced it (parents plus a backward
closure mapping the output gradient to parent gradients).  Calling
:meth:`Tensor.backward` walks the recorded graph in reverse topological
order and accumulates ``.grad`` on every leaf that requires it.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "as_tensor",
    "get_dtype",
    "set_dtype",
    "precision",
    "no_grad",
    "concat",
    "stack",
    "where_const",
]

class _State(threading.local):
    # per thread, so concurrent inference cannot flip another thread's mode
    dtype = np.float32
    grad = True
    nan_guard = True


_state = _State()


class NonFiniteError(FloatingPointError):
    pass


def get_dtype():
    return _state.dtype


def set_dtype(dtype) -> None:
    _state.dtype = np.dtype(dtype).type


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default float type (float64 for gradient checks)."""
    old = _state.dtype
    set_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


@contextlib.contextmanager
def no_grad():
    old = _state.grad
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = old


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(get_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # graph construction -------------------------------------------------
    @staticmethod
    def _op(data, parents, backward) -> "Tensor":
        rg = _state.grad and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=rg)
        if rg:
            out._parents = parents
            out._backward = backward
        if _state.nan_guard and not np.all(np.isfinite(out.data)):
            raise NonFiniteError("non-finite value produced in forward pass")
        return out

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        topo, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if _state.nan_guard and not np.all(np.isfinite(pg)):
                    raise NonFiniteError("non-finite gradient in backward pass")
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._op(self.data + other.data, (self, other),
                          lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._op(self.data - other.data, (self, other),
                          lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return Tensor._op(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._op(x * y, (self, other),
                          lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        out = x / y
        return Tensor._op(out, (self, other),
                          lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * out / y, y.shape)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        x = self.data
        return Tensor._op(x**exponent, (self,), lambda g: (g * exponent * x ** (exponent - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data

        def backward(g):
            if y.ndim == 1:
                gx = np.multiply.outer(g, y)
                gy = np.tensordot(x, g, axes=(list(range(x.ndim - 1)), list(range(g.ndim))))
                return gx, gy
            gx = g @ np.swapaxes(y, -1, -2)
            gy = np.swapaxes(x, -1, -2) @ g if x.ndim > 1 else np.multiply.outer(x, g)
            return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

        return Tensor._op(x @ y, (self, other), backward)

    # reductions and shape ops -----------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return Tensor._op(self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor._op(np.transpose(self.data, axes), (self,), lambda g: (np.transpose(g, inv),))

    def __getitem__(self, index):
        shape, dtype = self.shape, self.data.dtype
        parts = index if isinstance(index, tuple) else (index,)
        basic = all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            if basic:
                full[index] += g
            else:
                np.add.at(full, index, g)
            return (full,)

        return Tensor._op(self.data[index], (self,), backward)

    def pad(self, widths):
        """Zero padding with ``np.pad``-style widths."""
        slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, self.shape))
        return Tensor._op(np.pad(self.data, widths), (self,), lambda g: (g[slices],))

    # elementwise functions -----------------------------------------------
    def exp(self):
        out = np.exp(self.data)
        return Tensor._op(out, (self,), lambda g: (g * out,))

    def log(self):
        x = self.data
        return Tensor._op(np.log(x), (self,), lambda g: (g / x,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor._op(out, (self,), lambda g: (g * 0.5 / out,))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor._op(out, (self,), lambda g: (g * (1 - out * out),))

    def sigmoid(self):
        out = _sigmoid(self.data)
        return Tensor._op(out, (self,), lambda g: (g * out * (1 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free and avoids masked indexing
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype != get_dtype():
        arr = arr.astype(get_dtype())
    return Tensor(arr)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Tensor._op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._op(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def where_const(mask: np.ndarray, x: Tensor, value: float = 0.0) -> Tensor:
    """``x`` where ``mask`` else a constant; the constant branch has no gradient."""
    return Tensor._op(np.where(mask, x.data, value), (x,), lambda g: (np.where(mask, g, 0.0),))
