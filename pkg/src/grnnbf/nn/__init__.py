"""Small reverse-mode autodiff runtime with the layers the beamformers need."""

from . import functional
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .complex import CTensor
from .layers import GRU, Affine, Conv1d, LayerNorm, Module, Parameter, PReLU
from .optim import Adam, GradientError, clip_grad_norm
from .tensor import NonFiniteError, Tensor, as_tensor, concat, get_dtype, no_grad, precision, set_dtype, stack

__all__ = [
    "functional",
    "Tensor",
    "CTensor",
    "Parameter",
    "Module",
    "Affine",
    "PReLU",
    "LayerNorm",
    "Conv1d",
    "GRU",
    "Adam",
    "clip_grad_norm",
    "GradientError",
    "NonFiniteError",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "as_tensor",
    "concat",
    "stack",
    "get_dtype",
    "set_dtype",
    "precision",
    "no_grad",
]
