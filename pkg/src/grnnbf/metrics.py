"""Si-SNR and SDR metrics, and the differentiable Si-SNR training loss."""

from __future__ import annotations

import numpy as np

from .nn import Tensor, as_tensor
from .signal import WaveBuffer

__all__ = ["CLAMP_DB", "EPS", "si_snr", "sdr", "si_snr_loss"]

CLAMP_DB = 120.0
EPS = 1e-12


def _mono(x) -> np.ndarray:
    if isinstance(x, WaveBuffer):
        if x.num_channels != 1:
            raise ValueError("expected a single-channel signal")
        return x.samples[0]
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1) if x.ndim == 2 and 1 in x.shape else x


def _pair(estimate, reference):
    est, ref = _mono(estimate), _mono(reference)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    return est, ref


def si_snr(estimate, reference) -> float:
    """Scale-invariant SNR in dB after mean removal, clamped to 120 dB."""
    est, ref = _pair(estimate, reference)
    est = est - est.mean()
    ref = ref - ref.mean()
    energy = float(ref @ ref)
    if energy <= 0:
        raise ValueError("reference has zero energy")
    target = (est @ ref) / energy * ref
    err = est - target
    value = 10 * np.log10(float(target @ target) / (float(err @ err) + EPS) + EPS * EPS)
    return float(min(value, CLAMP_DB))


def sdr(estimate, reference) -> float:
    """Plain energy-ratio SDR: 10 log10(|s|^2 / (|s_hat - s|^2 + eps)), clamped."""
    est, ref = _pair(estimate, reference)
    energy = float(ref @ ref)
    if energy <= 0:
        raise ValueError("reference has zero energy")
    err = est - ref
    return float(min(10 * np.log10(energy / (float(err @ err) + EPS)), CLAMP_DB))


def si_snr_loss(estimate: Tensor, reference) -> Tensor:
    """Negative Si-SNR (no clamp) of a 1-D estimate Tensor against a constant reference."""
    ref = np.asarray(reference.samples[0] if isinstance(reference, WaveBuffer) else reference, dtype=np.float64)
    ref = ref - ref.mean()
    energy = float(ref @ ref)
    if energy <= 0:
        raise ValueError("reference has zero energy")
    if estimate.shape != ref.shape:
        raise ValueError(f"length mismatch: {estimate.shape} vs {ref.shape}")
    est = estimate - estimate.mean()
    ref_t = as_tensor(ref)
    target = ref_t * ((est * ref_t).sum() * (1.0 / energy))
    err = est - target
    ratio = (target * target).sum() / ((err * err).sum() + EPS)
    return ratio.log() * (-10.0 / np.log(10.0))
