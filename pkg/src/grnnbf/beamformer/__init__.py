from .classic import (
    DEFAULT_LOADING,
    BeamformerError,
    BeamWeights,
    apply_beamformer,
    diagonal_load,
    gev_weights,
    mvdr_weights,
)
from .covariance import (
    LAYER_NORMALIZED,
    MASK_NORMALIZED,
    RAW,
    CovarianceSequence,
    DegenerateMaskError,
    chunk_covariance,
    frame_covariance,
    layer_normalize_cov,
    mask_normalize,
)
from .eig import eigh_jacobi, fix_phase, principal_eigenvector
from .recurrent import GRNNBF, RNNGEV, RecurrentConfig, build_recurrent, grnn_bf_weights, rnn_gev_weights

__all__ = [
    "DEFAULT_LOADING",
    "BeamformerError",
    "BeamWeights",
    "apply_beamformer",
    "diagonal_load",
    "gev_weights",
    "mvdr_weights",
    "LAYER_NORMALIZED",
    "MASK_NORMALIZED",
    "RAW",
    "CovarianceSequence",
    "DegenerateMaskError",
    "chunk_covariance",
    "frame_covariance",
    "layer_normalize_cov",
    "mask_normalize",
    "eigh_jacobi",
    "fix_phase",
    "principal_eigenvector",
    "GRNNBF",
    "RNNGEV",
    "RecurrentConfig",
    "build_recurrent",
    "grnn_bf_weights",
    "rnn_gev_weights",
]
