"""A small reverse-mode autodiff core over numpy arrays."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check, relative_error
from .optim import AdamState, adam_step
from .tensor import Graph, Tensor, as_tensor, backward, default_dtype, no_grad, parameter, precision

__all__ = [
    "AdamState",
    "Graph",
    "GradCheckReport",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "default_dtype",
    "grad_check",
    "no_grad",
    "load_checkpoint",
    "ops",
    "parameter",
    "precision",
    "relative_error",
    "save_checkpoint",
]
