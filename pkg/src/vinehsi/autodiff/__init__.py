"""Minimal dense tensors with reverse-mode differentiation."""
from .tensor import Tensor, no_grad
from . import ops
from .optim import RMSprop, rmsprop_step
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = ["Tensor", "no_grad", "ops", "RMSprop", "rmsprop_step", "save_checkpoint", "load_checkpoint"]
