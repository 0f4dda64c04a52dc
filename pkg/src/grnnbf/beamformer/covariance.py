"""Spatial covariance estimates: frame-wise, mask-normalized, layer-normalized
and chunk-level (real-mask weighted)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import CTensor, Tensor, functional as Fn, no_grad, precision
from ..signal import ComplexSpectrogram

__all__ = [
    "RAW",
    "MASK_NORMALIZED",
    "LAYER_NORMALIZED",
    "CovarianceSequence",
    "DegenerateMaskError",
    "frame_covariance",
    "mask_normalize",
    "mask_norm_denominator",
    "layer_normalize_cov",
    "chunk_covariance",
    "flatten_cov",
    "unflatten_cov",
    "frame_covariance_t",
    "mask_normalize_t",
]

RAW = "raw"
MASK_NORMALIZED = "mask-normalized"
LAYER_NORMALIZED = "layer-normalized"

MASK_FLOOR = 1e-10


class DegenerateMaskError(ValueError):
    pass


@dataclass
class CovarianceSequence:
    data: np.ndarray  # (T, F, M, M) complex
    normalization: str = RAW

    @property
    def shape(self):
        return self.data.shape

    @property
    def num_mics(self) -> int:
        return self.data.shape[-1]

    @property
    def is_hermitian_form(self) -> bool:
        return self.normalization in (RAW, MASK_NORMALIZED)


def _as_array(est) -> np.ndarray:
    return est.data if isinstance(est, ComplexSpectrogram) else np.asarray(est)


def frame_covariance(est) -> CovarianceSequence:
    """Rank-one per-bin outer products S(t,f) S(t,f)^H."""
    S = _as_array(est)
    return CovarianceSequence(np.einsum("tfi,tfj->tfij", S, np.conj(S)), RAW)


def mask_norm_denominator(crm: np.ndarray) -> np.ndarray:
    """d(f) = sum_t |cRM(t,f)|^2, raising if any bin is degenerate."""
    d = np.sum(np.abs(np.asarray(crm)) ** 2, axis=0)
    bad = np.flatnonzero(d < MASK_FLOOR)
    if bad.size:
        raise DegenerateMaskError(f"degenerate mask at frequency {int(bad[0])} (sum |cRM|^2 = {d[bad[0]]:.3g})")
    return d


def mask_normalize(cov: CovarianceSequence, crm: np.ndarray) -> CovarianceSequence:
    """Divide every frame covariance by sum_t |cRM(t,f)|^2."""
    if cov.normalization != RAW:
        raise ValueError(f"mask normalization expects a raw covariance, got {cov.normalization}")
    if np.shape(crm) != cov.data.shape[:2]:
        raise ValueError(f"mask shape {np.shape(crm)} != covariance (T, F) {cov.data.shape[:2]}")
    d = mask_norm_denominator(crm)
    return CovarianceSequence(cov.data / d[None, :, None, None], MASK_NORMALIZED)


def flatten_cov(data: np.ndarray) -> np.ndarray:
    """(..., M, M) complex -> (..., 2 M^2) as [real | imag]."""
    lead = data.shape[:-2]
    n = data.shape[-1] * data.shape[-2]
    return np.concatenate([data.real.reshape(lead + (n,)), data.imag.reshape(lead + (n,))], axis=-1)


def unflatten_cov(flat: np.ndarray, M: int) -> np.ndarray:
    n = M * M
    lead = flat.shape[:-1]
    return (flat[..., :n] + 1j * flat[..., n:]).reshape(lead + (M, M))


def layer_normalize_cov(cov: CovarianceSequence, gamma, beta, eps: float = 1e-5) -> CovarianceSequence:
    """LayerNorm over the flattened [real | imag] 2 M^2 vector of each matrix."""
    if cov.normalization != RAW:
        raise ValueError(f"layer normalization expects a raw covariance, got {cov.normalization}")
    M = cov.num_mics
    g = gamma.data if isinstance(gamma, Tensor) else np.asarray(gamma, dtype=np.float64)
    b = beta.data if isinstance(beta, Tensor) else np.asarray(beta, dtype=np.float64)
    with no_grad(), precision(np.float64):
        out = Fn.layer_norm(Tensor(flatten_cov(cov.data)), Tensor(g.astype(np.float64)),
                            Tensor(b.astype(np.float64)), eps)
    return CovarianceSequence(unflatten_cov(out.data, M), LAYER_NORMALIZED)


def chunk_covariance(spec, mask: np.ndarray) -> np.ndarray:
    """Chunk-level covariance weighted by the squared real mask, (F, M, M).

    Phi(f) = sum_t m(t,f)^2 Y Y^H / sum_t m(t,f)^2
    """
    Y = _as_array(spec)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != Y.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} != spectrogram (T, F) {Y.shape[:2]}")
    if np.any(mask < 0) or np.any(mask > 1):
        raise ValueError("mask values must lie in [0, 1]")
    w = mask**2
    denom = w.sum(axis=0)
    bad = np.flatnonzero(denom <= 0)
    if bad.size:
        raise DegenerateMaskError(f"mask sums to zero at frequency {int(bad[0])}")
    phi = np.einsum("tf,tfi,tfj->fij", w, Y, np.conj(Y))
    return phi / denom[:, None, None]


# differentiable counterparts ------------------------------------------------

def frame_covariance_t(S: CTensor) -> CTensor:
    """S S^H for (T, F, M) complex tensors -> (T, F, M, M)."""
    T, F, M = S.shape
    col = S.reshape(T, F, M, 1)
    row = S.conj().reshape(T, F, 1, M)
    return col * row


def mask_normalize_t(phi_flat: Tensor, crm: CTensor) -> Tensor:
    """Divide flattened (T, F, 2M^2) covariances by sum_t |cRM|^2 per bin."""
    d = crm.abs2().sum(axis=0)
    low = np.flatnonzero(d.data < MASK_FLOOR)
    if low.size:
        raise DegenerateMaskError(f"degenerate mask at frequency {int(low[0])}")
    F = d.shape[0]
    return phi_flat / d.reshape(1, F, 1)
