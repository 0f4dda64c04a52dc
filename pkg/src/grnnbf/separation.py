"""End-to-end separation systems.

A system maps a multichannel mixture (plus the target DOA) to a single
channel waveform.  The neural system is differentiable from the output
waveform back to every estimator and beamformer parameter.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .array_sim import ArrayGeometry, Scene
from .beamformer.classic import apply_beamformer, gev_weights, mvdr_weights
from .beamformer.covariance import chunk_covariance, frame_covariance_t
from .beamformer.recurrent import RecurrentConfig, build_recurrent
from .crf import CrfEstimator, EstimatorConfig, apply_crf, apply_crf_t, estimate_crf, neighborhoods
from .features import FeatureLayout, extract_features
from .nn import CTensor, Module, Tensor, functional as Fn, no_grad
from .signal import ComplexSpectrogram, StftConfig, WaveBuffer, hann_window, istft, stft, window_power

__all__ = [
    "istft_t",
    "SeparationModel",
    "prepare_inputs",
    "oracle_masks",
    "classic_from_masks",
    "classic_from_crf",
    "IdentitySystem",
    "OracleClassicSystem",
    "CrfClassicSystem",
    "NeuralSystem",
]


@lru_cache(maxsize=8)
def _synthesis(cfg: StftConfig):
    """Real matrices mapping one-sided bins to windowed time frames, so that
    frame = Re(X) @ C + Im(X) @ S equals irfft(X)[:W] * window."""
    N, W = cfg.fft_size, cfg.window_length
    k = np.arange(cfg.num_bins)[:, None]
    n = np.arange(W)[None, :]
    weight = np.full((cfg.num_bins, 1), 2.0)
    weight[0] = weight[-1] = 1.0
    win = hann_window(W)[None, :]
    C = weight * np.cos(2 * np.pi * k * n / N) / N * win
    S = -weight * np.sin(2 * np.pi * k * n / N) / N * win
    S[0] = 0.0
    S[-1] = 0.0
    return C, S


def istft_t(spec: CTensor, cfg: StftConfig, length: int) -> Tensor:
    """Differentiable single-channel inverse STFT of a (T, F) complex tensor,
    numerically identical (up to rounding) to :func:`grnnbf.signal.istft`."""
    C, S = _synthesis(cfg)
    T = spec.shape[0]
    frames = spec.re @ C + spec.im @ S
    out = Fn.overlap_add(frames, cfg.hop)
    norm = window_power(T, cfg)
    inv = np.where(norm > 1e-10, 1.0 / np.where(norm > 1e-10, norm, 1.0), 0.0)
    out = out * inv
    return out[cfg.pad : cfg.pad + length]


def prepare_inputs(mixture: WaveBuffer, geom: ArrayGeometry, doa: float, cfg: StftConfig):
    """STFT and estimator features for one mixture."""
    Y = stft(mixture, cfg)
    return Y, extract_features(Y, geom, doa, cfg)


class SeparationModel(Module):
    """cRF estimator followed by a recurrent beamformer (or, for kind "crf",
    the estimator alone producing the reference-channel speech estimate)."""

    def __init__(self, num_mics: int, stft_cfg: StftConfig, est_cfg: EstimatorConfig,
                 bf_cfg: RecurrentConfig | None, rng: np.random.Generator, zero_head: bool = False):
        self.num_mics = num_mics
        self.stft_cfg = stft_cfg
        self.est_cfg = est_cfg
        self.bf_cfg = bf_cfg
        self.layout = FeatureLayout(stft_cfg.num_bins, tuple((i, 0) for i in range(1, num_mics)))
        self.estimator = CrfEstimator(self.layout.dim, stft_cfg.num_bins, est_cfg, rng, zero_head=zero_head)
        self.beamformer = build_recurrent(num_mics, bf_cfg, rng) if bf_cfg is not None else None

    @property
    def kind(self) -> str:
        return self.bf_cfg.kind if self.bf_cfg is not None else "crf"

    def spectrum(self, Y: np.ndarray, feats: np.ndarray) -> CTensor:
        """Separated (T, F) complex spectrum."""
        if feats.shape[1] != self.layout.dim:
            raise ValueError(f"feature dim {feats.shape[1]} does not match the model layout ({self.layout.dim})")
        k = self.est_cfg.crf_half_width
        nb = neighborhoods(Y, k)
        crf_s, crf_n = self.estimator(Tensor(feats))
        S_hat = apply_crf_t(Y, crf_s, k, nb)
        if self.beamformer is None:
            return S_hat[:, :, 0]
        N_hat = apply_crf_t(Y, crf_n, k, nb)
        phi_s = frame_covariance_t(S_hat).flatten_real()
        phi_n = frame_covariance_t(N_hat).flatten_real()
        center = (2 * k + 1) ** 2 // 2
        phi_s, phi_n = self.beamformer.normalize(phi_s, phi_n, crf_s[:, :, center], crf_n[:, :, center])
        w = self.beamformer(phi_s, phi_n)
        return (w.conj() * CTensor(Y.real, Y.imag)).sum(axis=-1)

    def forward(self, Y: np.ndarray, feats: np.ndarray, length: int) -> Tensor:
        return istft_t(self.spectrum(Y, feats), self.stft_cfg, length)

    def separate(self, mixture: WaveBuffer, geom: ArrayGeometry, doa: float) -> np.ndarray:
        Y, feats = prepare_inputs(mixture, geom, doa, self.stft_cfg)
        dtype = self.parameters()[0].data.dtype
        with no_grad():
            out = self.forward(Y.data, feats.data.astype(dtype), mixture.length)
        return out.data.astype(np.float64)


def oracle_masks(scene: Scene, cfg: StftConfig, ref_channel: int = 0):
    """Ideal ratio masks of target and noise on the reference channel."""
    S = stft(scene.target_clean.channel(ref_channel), cfg).data[:, :, 0]
    N = stft(scene.noise_plus_interference.channel(ref_channel), cfg).data[:, :, 0]
    ps, pn = np.abs(S) ** 2, np.abs(N) ** 2
    total = np.maximum(ps + pn, 1e-20)
    return np.sqrt(ps / total), np.sqrt(pn / total)


def _classic(kind: str, phi_s, phi_n, loading):
    if kind == "mvdr":
        return mvdr_weights(phi_s, phi_n, loading)
    if kind == "gev":
        return gev_weights(phi_s, phi_n, loading)
    raise ValueError(f"unknown classic beamformer {kind!r}")


def classic_from_masks(Y: ComplexSpectrogram, mask_s, mask_n, kind: str = "mvdr", loading: float = 1e-5):
    """Chunk-level beamforming with covariances weighted by real masks."""
    w = _classic(kind, chunk_covariance(Y, mask_s), chunk_covariance(Y, mask_n), loading)
    return apply_beamformer(w, Y), w


def classic_from_crf(Y: ComplexSpectrogram, crf, kind: str = "mvdr", loading: float = 1e-5):
    """Chunk-level beamforming with covariances from cRF-filtered estimates,
    normalized by the summed squared centre taps."""
    covs = []
    for which, filt in (("speech", crf.crf_speech), ("noise", crf.crf_noise)):
        est = apply_crf(Y, filt).data
        d = np.sum(np.abs(crf.center(which)) ** 2, axis=0)
        phi = np.einsum("tfi,tfj->fij", est, np.conj(est)) / np.maximum(d, 1e-10)[:, None, None]
        covs.append(phi)
    w = _classic(kind, covs[0], covs[1], loading)
    return apply_beamformer(w, Y), w


class IdentitySystem:
    """Reference-channel mixture, the evaluation baseline."""

    name = "mixture"

    def __call__(self, scene: Scene, geom, cfg) -> np.ndarray:
        return scene.mixture.samples[0].copy()


class OracleClassicSystem:
    def __init__(self, kind: str = "mvdr", loading: float = 1e-5):
        self.kind = kind
        self.loading = loading
        self.name = f"oracle-{kind}"

    def __call__(self, scene: Scene, geom, cfg) -> np.ndarray:
        Y = stft(scene.mixture, cfg)
        ms, mn = oracle_masks(scene, cfg)
        out, _ = classic_from_masks(Y, ms, mn, self.kind, self.loading)
        return istft(out, cfg, scene.mixture.length).samples[0]


class CrfClassicSystem:
    def __init__(self, model: SeparationModel, kind: str = "mvdr", loading: float = 1e-5):
        self.model = model
        self.kind = kind
        self.loading = loading
        self.name = f"crf-{kind}"

    def separate(self, mixture: WaveBuffer, geom: ArrayGeometry, doa: float) -> np.ndarray:
        cfg = self.model.stft_cfg
        Y, feats = prepare_inputs(mixture, geom, doa, cfg)
        crf = estimate_crf(self.model.estimator, feats)
        out, _ = classic_from_crf(Y, crf, self.kind, self.loading)
        return istft(out, cfg, mixture.length).samples[0]

    def __call__(self, scene: Scene, geom, cfg) -> np.ndarray:
        return self.separate(scene.mixture, geom, scene.spec.target_azimuth)


class NeuralSystem:
    def __init__(self, model: SeparationModel):
        self.model = model
        self.name = model.kind if model.bf_cfg is None else f"{model.kind}-{model.bf_cfg.norm}"

    def separate(self, mixture: WaveBuffer, geom: ArrayGeometry, doa: float) -> np.ndarray:
        return self.model.separate(mixture, geom, doa)

    def __call__(self, scene: Scene, geom, cfg) -> np.ndarray:
        return self.model.separate(scene.mixture, geom, scene.spec.target_azimuth)
