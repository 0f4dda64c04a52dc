"""Dilated-convolution estimator of complex ratio filters (cRFs) and their
application to multichannel spectrograms."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .features import FeatureTensor
from .nn import Affine, Conv1d, CTensor, LayerNorm, Module, PReLU, Tensor, functional as Fn, no_grad
from .signal import ComplexSpectrogram

__all__ = [
    "EstimatorConfig",
    "CrfPair",
    "CrfEstimator",
    "estimate_crf",
    "neighborhoods",
    "shift_taps",
    "apply_crf",
    "apply_crf_t",
]


@dataclass
class EstimatorConfig:
    """Defaults are the desk-scale network; the full size is
    ``EstimatorConfig(blocks=4, layers_per_block=8, channels=256)``."""

    blocks: int = 2
    layers_per_block: int = 4
    channels: int = 64
    kernel: int = 3
    crf_half_width: int = 1
    causal: bool = False

    def __post_init__(self):
        if min(self.blocks, self.layers_per_block, self.channels, self.kernel) < 1:
            raise ValueError("blocks, layers_per_block, channels and kernel must be >= 1")
        if self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        if self.crf_half_width < 0:
            raise ValueError("crf_half_width must be >= 0")

    @property
    def taps(self) -> int:
        return (2 * self.crf_half_width + 1) ** 2

    def head_dim(self, num_bins: int) -> int:
        return 2 * self.taps * 2 * num_bins

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CrfPair:
    """Speech and noise filters, each (T, F, K, K) complex with K = 2*kappa + 1."""

    crf_speech: np.ndarray
    crf_noise: np.ndarray

    @property
    def half_width(self) -> int:
        return (self.crf_speech.shape[-1] - 1) // 2

    def center(self, which: str = "speech") -> np.ndarray:
        """The centre tap (a complex ratio mask), shape (T, F)."""
        crf = self.crf_speech if which == "speech" else self.crf_noise
        k = self.half_width
        return crf[:, :, k, k]


class CrfEstimator(Module):
    """Input LayerNorm and bottleneck, B x L residual dilated-conv layers
    (dilation 2^l within each block), and a shared trunk split into speech
    and noise heads only at the final tanh-bounded output layer."""

    def __init__(self, feature_dim: int, num_bins: int, cfg: EstimatorConfig,
                 rng: np.random.Generator, zero_head: bool = False):
        C = cfg.channels
        self.cfg = cfg
        self.num_bins = num_bins
        self.feature_dim = feature_dim
        self.input_norm = LayerNorm(feature_dim)
        self.bottleneck = Affine(feature_dim, C, rng)
        self.convs, self.acts, self.norms = [], [], []
        for _ in range(cfg.blocks):
            for layer in range(cfg.layers_per_block):
                self.convs.append(Conv1d(C, C, cfg.kernel, rng, dilation=2**layer, causal=cfg.causal))
                self.acts.append(PReLU(C))
                self.norms.append(LayerNorm(C))
        self.head_act = PReLU(C)
        self.head = Affine(C, cfg.head_dim(num_bins), rng, zero=zero_head)

    def forward(self, feats) -> tuple:
        """(T, D) features -> (speech, noise) CTensors of shape (T, F, taps)."""
        x = self.bottleneck(self.input_norm(feats))
        for conv, act, norm in zip(self.convs, self.acts, self.norms):
            x = x + norm(act(conv(x)))
        y = self.head(self.head_act(x)).tanh()
        T = y.shape[0]
        y = y.reshape(T, 2, 2, self.num_bins, self.cfg.taps)
        return CTensor(y[:, 0, 0], y[:, 0, 1]), CTensor(y[:, 1, 0], y[:, 1, 1])


def estimate_crf(model: CrfEstimator, features: FeatureTensor) -> CrfPair:
    if features.data.shape[1] != model.feature_dim:
        raise ValueError(f"feature dim {features.data.shape[1]} does not match the model ({model.feature_dim})")
    dtype = model.parameters()[0].data.dtype
    with no_grad():
        speech, noise = model(Tensor(features.data.astype(dtype)))
    K = 2 * model.cfg.crf_half_width + 1
    T, F = features.data.shape[0], model.num_bins
    return CrfPair(speech.numpy().reshape(T, F, K, K).astype(np.complex128),
                   noise.numpy().reshape(T, F, K, K).astype(np.complex128))


def neighborhoods(Y: np.ndarray, half_width: int) -> np.ndarray:
    """Zero-padded (2k+1)^2 T-F neighbourhoods: out[t, f, a*(2k+1)+b, m] = Y[t+a-k, f+b-k, m]."""
    k = half_width
    T, F = Y.shape[:2]
    padded = np.pad(Y, ((k, k), (k, k)) + ((0, 0),) * (Y.ndim - 2))
    taps = [padded[a : a + T, b : b + F] for a in range(2 * k + 1) for b in range(2 * k + 1)]
    return np.stack(taps, axis=2)


def shift_taps(crf: np.ndarray, half_width: int) -> np.ndarray:
    """Re-index a (T, F, taps, ...) filter stack so that tap (a, b) at (t, f)
    holds tap (a, b) of the filter stored at (t+a-k, f+b-k); zero off-grid."""
    k = half_width
    K = 2 * k + 1
    T, F = crf.shape[:2]
    padded = np.pad(crf, ((k, k), (k, k)) + ((0, 0),) * (crf.ndim - 2))
    out = np.empty_like(crf)
    for a in range(K):
        for b in range(K):
            j = a * K + b
            out[:, :, j] = padded[a : a + T, b : b + F, j]
    return out


def apply_crf(spec, crf: np.ndarray) -> ComplexSpectrogram:
    """S(t,f,m) = sum_{a,b} H(t+a, f+b)[a,b] * Y(t+a, f+b, m), offsets a, b in -k..k.

    Each neighbouring bin contributes through the tap of its own filter that
    points back at (t, f); bins off the grid are zero.  One filter is shared
    by all channels.  ``crf`` is (T, F, K, K).
    """
    Y = spec.data if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    length = spec.length if isinstance(spec, ComplexSpectrogram) else None
    T, F, K, K2 = crf.shape
    if (T, F) != Y.shape[:2] or K != K2 or K % 2 == 0:
        raise ValueError(f"filter {crf.shape} does not match spectrogram {Y.shape}")
    k = (K - 1) // 2
    h = shift_taps(crf.reshape(T, F, K * K), k)
    out = np.einsum("tfk,tfkm->tfm", h, neighborhoods(Y, k))
    return ComplexSpectrogram(out, length=length)


def apply_crf_t(Y: np.ndarray, crf: CTensor, half_width: int, nb: np.ndarray | None = None) -> CTensor:
    """Differentiable :func:`apply_crf` for a (T, F, taps) filter tensor and a
    constant (T, F, M) spectrogram."""
    if nb is None:
        nb = neighborhoods(Y, half_width)
    out = Fn.crf_filter(Fn.shift_taps(crf.re, half_width), Fn.shift_taps(crf.im, half_width), nb)
    return CTensor(out[0], out[1])
