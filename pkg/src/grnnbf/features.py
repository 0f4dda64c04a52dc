"""Estimator input features: LPS, IPD and the DOA-guided directional feature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array_sim import ArrayGeometry, SteeringVector, steering_vector
from .signal import ComplexSpectrogram, StftConfig

__all__ = [
    "LPS_FLOOR",
    "FeatureTensor",
    "FeatureLayout",
    "default_pairs",
    "lps",
    "ipd",
    "ipd_phase",
    "directional_feature",
    "extract_features",
]

LPS_FLOOR = 1e-8
_PHASE_FLOOR = 1e-12


def default_pairs(num_mics: int) -> list:
    """Every microphone paired against microphone 0."""
    return [(i, 0) for i in range(1, num_mics)]


@dataclass(frozen=True)
class FeatureLayout:
    """Names and column spans of the feature blocks."""

    num_bins: int
    pairs: tuple

    @property
    def blocks(self) -> list:
        F, P = self.num_bins, len(self.pairs)
        return [("lps", 0, F), ("ipd", F, F + 2 * F * P), ("df", F + 2 * F * P, 2 * F + 2 * F * P)]

    @property
    def dim(self) -> int:
        return self.blocks[-1][2]

    def to_dict(self) -> dict:
        return {"num_bins": self.num_bins, "pairs": [list(p) for p in self.pairs],
                "blocks": [list(b) for b in self.blocks]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureLayout":
        return cls(int(d["num_bins"]), tuple(tuple(p) for p in d["pairs"]))


@dataclass
class FeatureTensor:
    data: np.ndarray  # (T, D) real
    layout: FeatureLayout

    def __post_init__(self):
        if self.data.shape[1] != self.layout.dim:
            raise ValueError(f"feature dim {self.data.shape[1]} != layout dim {self.layout.dim}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("features contain non-finite values")


def lps(spec: ComplexSpectrogram, ref_channel: int = 0) -> np.ndarray:
    """log(|Y_ref|^2 + 1e-8), shape (T, F)."""
    if not 0 <= ref_channel < spec.num_channels:
        raise IndexError(f"ref_channel {ref_channel} out of range")
    return np.log(np.abs(spec.data[:, :, ref_channel]) ** 2 + LPS_FLOOR)


def ipd_phase(spec: ComplexSpectrogram, pairs) -> np.ndarray:
    """Raw phase differences angle(Y_i) - angle(Y_j), shape (T, F, P).

    Bins where both channels are below 1e-12 in magnitude get phase 0.
    """
    Y = spec.data
    out = np.empty(Y.shape[:2] + (len(pairs),))
    for p, (i, j) in enumerate(pairs):
        if i == j:
            raise ValueError(f"pair ({i}, {j}) compares a channel with itself")
        delta = np.angle(Y[:, :, i]) - np.angle(Y[:, :, j])
        dead = (np.abs(Y[:, :, i]) < _PHASE_FLOOR) & (np.abs(Y[:, :, j]) < _PHASE_FLOOR)
        out[:, :, p] = np.where(dead, 0.0, delta)
    return out


def ipd(spec: ComplexSpectrogram, pairs) -> np.ndarray:
    """(cos, sin) of the inter-channel phase difference, shape (T, F, P, 2)."""
    phase = ipd_phase(spec, pairs)
    return np.stack([np.cos(phase), np.sin(phase)], axis=-1)


def directional_feature(ipd_raw_phase: np.ndarray, v: SteeringVector, pairs) -> np.ndarray:
    """Mean over pairs of cos(observed IPD - steering phase difference), (T, F)."""
    if ipd_raw_phase.shape[-1] != len(pairs):
        raise ValueError("IPD pair count does not match pairs")
    sv_phase = np.angle(v.values)
    target = np.stack([sv_phase[:, i] - sv_phase[:, j] for i, j in pairs], axis=-1)
    return np.mean(np.cos(ipd_raw_phase - target[None]), axis=-1)


def extract_features(spec: ComplexSpectrogram, geom: ArrayGeometry, doa: float,
                     cfg: StftConfig = StftConfig(), pairs=None, ref_channel: int = 0) -> FeatureTensor:
    """Concatenate [LPS | IPD cos/sin | DF] per frame."""
    if pairs is None:
        pairs = default_pairs(spec.num_channels)
    pairs = tuple(tuple(p) for p in pairs)
    T, F = spec.num_frames, spec.num_bins
    phase = ipd_phase(spec, pairs)
    ipd_feat = np.stack([np.cos(phase), np.sin(phase)], axis=-1)
    # (T, F, P, 2) -> (T, P, 2, F) so each block is a contiguous F-vector
    ipd_flat = np.transpose(ipd_feat, (0, 2, 3, 1)).reshape(T, -1)
    df = directional_feature(phase, steering_vector(geom, doa, cfg), pairs)
    data = np.concatenate([lps(spec, ref_channel), ipd_flat, df], axis=1)
    return FeatureTensor(data, FeatureLayout(F, pairs))
