"""Complex arithmetic on (real, imag) Tensor pairs."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, concat

__all__ = ["CTensor"]


class CTensor:
    __slots__ = ("re", "im")

    def __init__(self, re, im):
        self.re = as_tensor(re)
        self.im = as_tensor(im)

    @classmethod
    def from_numpy(cls, z: np.ndarray) -> "CTensor":
        return cls(np.real(z), np.imag(z))

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    @property
    def shape(self):
        return self.re.shape

    def __add__(self, other: "CTensor") -> "CTensor":
        return CTensor(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "CTensor") -> "CTensor":
        return CTensor(self.re - other.re, self.im - other.im)

    def __mul__(self, other) -> "CTensor":
        if isinstance(other, CTensor):
            return CTensor(self.re * other.re - self.im * other.im,
                           self.re * other.im + self.im * other.re)
        return CTensor(self.re * other, self.im * other)

    def conj(self) -> "CTensor":
        return CTensor(self.re, -self.im)

    def abs2(self) -> Tensor:
        return self.re * self.re + self.im * self.im

    def sum(self, axis=None, keepdims: bool = False) -> "CTensor":
        return CTensor(self.re.sum(axis, keepdims), self.im.sum(axis, keepdims))

    def reshape(self, *shape) -> "CTensor":
        return CTensor(self.re.reshape(*shape), self.im.reshape(*shape))

    def transpose(self, *axes) -> "CTensor":
        return CTensor(self.re.transpose(*axes), self.im.transpose(*axes))

    def __getitem__(self, index) -> "CTensor":
        return CTensor(self.re[index], self.im[index])

    def matmul(self, other: "CTensor") -> "CTensor":
        """Batched complex matrix product over the last two axes."""
        return CTensor(self.re @ other.re - self.im @ other.im,
                       self.re @ other.im + self.im @ other.re)

    def flatten_real(self) -> Tensor:
        """[real | imag] concatenated along a new flattened last axis.

        (..., A, B) complex -> (..., 2*A*B) real.
        """
        lead = self.shape[:-2]
        n = self.shape[-2] * self.shape[-1]
        return concat([self.re.reshape(*lead, n), self.im.reshape(*lead, n)], axis=-1)

    @classmethod
    def unflatten_real(cls, x: Tensor, rows: int, cols: int) -> "CTensor":
        """Inverse of :meth:`flatten_real`."""
        lead = x.shape[:-1]
        n = rows * cols
        return cls(x[..., :n].reshape(*lead, rows, cols), x[..., n:].reshape(*lead, rows, cols))
