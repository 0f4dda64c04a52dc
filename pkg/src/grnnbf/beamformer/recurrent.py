"""Recurrent beamformers that predict frame-level weights from covariances.

Both models run their GRUs along time independently for every frequency
bin (frequencies are the batch axis) with parameters shared across bins,
and emit 2M real outputs per (t, f) that become the complex weight vector.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..nn import GRU, Affine, CTensor, LayerNorm, Module, PReLU, Tensor, concat, no_grad
from .classic import BeamWeights
from .covariance import (
    LAYER_NORMALIZED,
    MASK_NORMALIZED,
    RAW,
    CovarianceSequence,
    flatten_cov,
    mask_normalize_t,
)

__all__ = [
    "RecurrentConfig",
    "GRNNBF",
    "RNNGEV",
    "build_recurrent",
    "rnn_gev_weights",
    "grnn_bf_weights",
]

NORM_MODES = ("mask", "layer")


@dataclass
class RecurrentConfig:
    kind: str = "grnn-bf"
    norm: str = "layer"
    hidden: int = 64
    num_layers: int = 2
    dnn_units: int = 64

    def __post_init__(self):
        if self.kind not in ("grnn-bf", "rnn-gev"):
            raise ValueError(f"unknown recurrent beamformer {self.kind!r}")
        if self.norm not in NORM_MODES:
            raise ValueError(f"normalization must be one of {NORM_MODES}, got {self.norm!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class _RecurrentBase(Module):
    kind = ""

    def __init__(self, num_mics: int, cfg: RecurrentConfig, rng: np.random.Generator):
        self.num_mics = num_mics
        self.cfg = cfg
        n = 2 * num_mics * num_mics
        if cfg.norm == "layer":
            self.ln_s = LayerNorm(n)
            self.ln_n = LayerNorm(n)

    @property
    def expected_mode(self) -> str:
        return LAYER_NORMALIZED if self.cfg.norm == "layer" else MASK_NORMALIZED

    def normalize(self, phi_s: Tensor, phi_n: Tensor, crm_s: CTensor | None = None,
                  crm_n: CTensor | None = None):
        """Apply this model's covariance normalization to flattened raw
        covariances (T, F, 2M^2)."""
        if self.cfg.norm == "layer":
            return self.ln_s(phi_s), self.ln_n(phi_n)
        return mask_normalize_t(phi_s, crm_s), mask_normalize_t(phi_n, crm_n)

    def _select_reference(self) -> None:
        # zero output weights and an e_1 bias: an untrained model passes the
        # reference channel through unchanged
        bias = np.zeros(2 * self.num_mics)
        bias[0] = 1.0
        self.out.bias.data = bias.astype(self.out.bias.data.dtype)
        self.out.weight.data = np.zeros_like(self.out.weight.data)

    def _weights(self, y: Tensor) -> CTensor:
        # (F, T, 2M) -> complex (T, F, M)
        y = y.transpose(1, 0, 2)
        M = self.num_mics
        return CTensor(y[..., :M], y[..., M:])


class GRNNBF(_RecurrentBase):
    """One GRU stack over the concatenated [Phi_N | Phi_S] inputs, then a
    PReLU hidden layer and a linear 2M output layer."""

    kind = "grnn-bf"

    def __init__(self, num_mics: int, cfg: RecurrentConfig, rng: np.random.Generator):
        super().__init__(num_mics, cfg, rng)
        n = 2 * num_mics * num_mics
        self.rnn = GRU(2 * n, cfg.hidden, rng, cfg.num_layers)
        self.hidden = Affine(cfg.hidden, cfg.dnn_units, rng)
        self.act = PReLU(cfg.dnn_units)
        self.out = Affine(cfg.dnn_units, 2 * num_mics, rng)
        self._select_reference()

    def forward(self, phi_s: Tensor, phi_n: Tensor) -> CTensor:
        x = concat([phi_n, phi_s], axis=-1).transpose(1, 0, 2)
        h = self.rnn(x)
        return self._weights(self.out(self.act(self.hidden(h))))


class RNNGEV(_RecurrentBase):
    """Two GRU stacks standing in for Phi_N^-1 and the accumulated Phi_S; their
    complex matrix product feeds a PReLU DNN that outputs the weights."""

    kind = "rnn-gev"

    def __init__(self, num_mics: int, cfg: RecurrentConfig, rng: np.random.Generator):
        super().__init__(num_mics, cfg, rng)
        n = 2 * num_mics * num_mics
        self.rnn_n = GRU(n, cfg.hidden, rng, cfg.num_layers)
        self.proj_n = Affine(cfg.hidden, n, rng)
        self.rnn_s = GRU(n, cfg.hidden, rng, cfg.num_layers)
        self.proj_s = Affine(cfg.hidden, n, rng)
        self.hidden = Affine(n, cfg.dnn_units, rng)
        self.act = PReLU(cfg.dnn_units)
        self.out = Affine(cfg.dnn_units, 2 * num_mics, rng)
        self._select_reference()

    def forward(self, phi_s: Tensor, phi_n: Tensor) -> CTensor:
        M = self.num_mics
        inv_n = self.proj_n(self.rnn_n(phi_n.transpose(1, 0, 2)))
        acc_s = self.proj_s(self.rnn_s(phi_s.transpose(1, 0, 2)))
        prod = CTensor.unflatten_real(inv_n, M, M).matmul(CTensor.unflatten_real(acc_s, M, M))
        return self._weights(self.out(self.act(self.hidden(prod.flatten_real()))))


def build_recurrent(num_mics: int, cfg: RecurrentConfig, rng: np.random.Generator) -> _RecurrentBase:
    cls = GRNNBF if cfg.kind == "grnn-bf" else RNNGEV
    return cls(num_mics, cfg, rng)


def _run(model: _RecurrentBase, phi_s: CovarianceSequence, phi_n: CovarianceSequence) -> BeamWeights:
    if phi_s.normalization != phi_n.normalization:
        raise ValueError(f"normalization mismatch: {phi_s.normalization} vs {phi_n.normalization}")
    if phi_s.shape != phi_n.shape:
        raise ValueError(f"covariance shapes differ: {phi_s.shape} vs {phi_n.shape}")
    if phi_s.normalization == RAW:
        raise ValueError("recurrent beamformers expect mask- or layer-normalized covariances")
    if phi_s.num_mics != model.num_mics:
        raise ValueError(f"model expects {model.num_mics} microphones, got {phi_s.num_mics}")
    dtype = model.parameters()[0].data.dtype
    with no_grad():
        w = model(Tensor(flatten_cov(phi_s.data).astype(dtype)), Tensor(flatten_cov(phi_n.data).astype(dtype)))
    return BeamWeights(w.numpy().astype(np.complex128), model.kind)


def rnn_gev_weights(model: RNNGEV, phi_s: CovarianceSequence, phi_n: CovarianceSequence) -> BeamWeights:
    """Frame-level (T, F, M) weights from normalized covariance sequences."""
    if not isinstance(model, RNNGEV):
        raise TypeError("rnn_gev_weights needs an RNNGEV model")
    return _run(model, phi_s, phi_n)


def grnn_bf_weights(model: GRNNBF, phi_s: CovarianceSequence, phi_n: CovarianceSequence) -> BeamWeights:
    """Frame-level (T, F, M) weights from normalized covariance sequences."""
    if not isinstance(model, GRNNBF):
        raise TypeError("grnn_bf_weights needs a GRNNBF model")
    return _run(model, phi_s, phi_n)
