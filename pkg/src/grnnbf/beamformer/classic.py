"""Chunk-level MVDR and GEV solutions and beamformer application."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..signal import ComplexSpectrogram
from .eig import eigh_jacobi, fix_phase, principal_eigenvector

__all__ = [
    "DEFAULT_LOADING",
    "BeamWeights",
    "BeamformerError",
    "diagonal_load",
    "mvdr_weights",
    "gev_weights",
    "apply_beamformer",
]

DEFAULT_LOADING = 1e-5
KINDS = ("mvdr", "gev", "rnn-gev", "grnn-bf")


class BeamformerError(RuntimeError):
    pass


@dataclass
class BeamWeights:
    """(F, M) chunk-level or (T, F, M) frame-level complex weights."""

    data: np.ndarray
    kind: str
    eigenvalues: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown beamformer kind {self.kind!r}")
        if self.data.ndim not in (2, 3):
            raise ValueError(f"weights must be (F, M) or (T, F, M), got {self.data.shape}")

    @property
    def frame_level(self) -> bool:
        return self.data.ndim == 3


def diagonal_load(phi_n: np.ndarray, delta: float = DEFAULT_LOADING) -> np.ndarray:
    """Phi_N + delta * trace(Phi_N) / M * I."""
    M = phi_n.shape[-1]
    tr = np.real(np.trace(phi_n, axis1=-2, axis2=-1))
    return phi_n + (delta * tr / M)[..., None, None] * np.eye(M)


def _cholesky(phi: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(phi)
    except np.linalg.LinAlgError:
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(phi)
        worst = int(np.nanargmax(np.where(np.isfinite(cond), cond, np.inf)))
        raise BeamformerError(
            f"noise covariance not positive definite after diagonal loading "
            f"(frequency {worst}, condition estimate {cond[worst]:.3g})"
        ) from None


def _forward_sub(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L x = b for lower-triangular L, batched over leading axes."""
    M = L.shape[-1]
    x = np.zeros_like(b)
    for i in range(M):
        x[..., i] = (b[..., i] - np.sum(L[..., i, :i] * x[..., :i], axis=-1)) / L[..., i, i]
    return x


def _back_sub(U: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve U x = b for upper-triangular U."""
    M = U.shape[-1]
    x = np.zeros_like(b)
    for i in range(M - 1, -1, -1):
        x[..., i] = (b[..., i] - np.sum(U[..., i, i + 1 :] * x[..., i + 1 :], axis=-1)) / U[..., i, i]
    return x


def mvdr_weights(phi_s: np.ndarray, phi_n: np.ndarray, loading: float = DEFAULT_LOADING,
                 steering: np.ndarray | None = None) -> BeamWeights:
    """w = Phi_N^-1 v / (v^H Phi_N^-1 v) per frequency.

    ``v`` is the principal eigenvector of ``phi_s`` unless ``steering`` is
    given.  Phi_N is diagonally loaded before the Cholesky solve.
    """
    phi_n = np.asarray(phi_n, dtype=np.complex128)
    if steering is None:
        _, v = principal_eigenvector(phi_s)
    else:
        v = np.asarray(steering, dtype=np.complex128)
    L = _cholesky(diagonal_load(phi_n, loading))
    x = _back_sub(np.conj(np.swapaxes(L, -1, -2)), _forward_sub(L, v))
    denom = np.sum(np.conj(v) * x, axis=-1)
    return BeamWeights(x / denom[..., None], "mvdr")


def gev_weights(phi_s: np.ndarray, phi_n: np.ndarray, loading: float = DEFAULT_LOADING) -> BeamWeights:
    """Principal generalized eigenvector of (Phi_S, Phi_N).

    Solved by Cholesky reduction Phi_N = L L^H, C = L^-1 Phi_S L^-H, then
    w = L^-H u for the top eigenvector u of C.  The result is unit-norm and
    phase-fixed; the generalized eigenvalues are kept on the result.
    """
    phi_s = np.asarray(phi_s, dtype=np.complex128)
    L = _cholesky(diagonal_load(np.asarray(phi_n, dtype=np.complex128), loading))
    M = L.shape[-1]
    eye = np.broadcast_to(np.eye(M, dtype=np.complex128), L.shape)
    Linv = np.stack([_forward_sub(L, eye[..., :, j]) for j in range(M)], axis=-1)
    C = Linv @ phi_s @ np.conj(np.swapaxes(Linv, -1, -2))
    lam, U = eigh_jacobi(C)
    w = np.einsum("...ji,...j->...i", np.conj(Linv), U[..., :, -1])
    return BeamWeights(fix_phase(w), "gev", eigenvalues=lam)


def apply_beamformer(w: BeamWeights | np.ndarray, Y) -> ComplexSpectrogram:
    """w(t,f)^H Y(t,f) -> single-channel (T, F, 1) spectrogram."""
    data = w.data if isinstance(w, BeamWeights) else np.asarray(w)
    length = Y.length if isinstance(Y, ComplexSpectrogram) else None
    Yd = Y.data if isinstance(Y, ComplexSpectrogram) else np.asarray(Y)
    T, F, M = Yd.shape
    if data.shape[-2:] != (F, M) or (data.ndim == 3 and data.shape[0] != T):
        raise ValueError(f"weights {data.shape} do not match spectrogram {Yd.shape}")
    out = np.sum(np.conj(data) * Yd, axis=-1) if data.ndim == 3 else np.einsum("fm,tfm->tf", np.conj(data), Yd)
    return ComplexSpectrogram(out[:, :, None], length=length)
