"""Numeric core: tensors, layers, losses, optimizer, gradient checks, checkpoints."""

from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .core import Tensor, check_finite
from .gradcheck import grad_check, relative_error
from .layers import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    ReLU,
    Sequential,
    conv2d_backward,
    conv2d_forward,
    dropout,
    fc_backward,
    fc_forward,
    relu,
    sigmoid,
)
from .losses import bce_loss, gaussian_nll_loss
from .optim import OptimizerState, RMSProp, rmsprop_step

__all__ = [
    "Tensor", "check_finite", "grad_check", "relative_error",
    "Conv2D", "Dense", "Dropout", "Flatten", "ReLU", "Sequential",
    "conv2d_forward", "conv2d_backward", "fc_forward", "fc_backward",
    "relu", "sigmoid", "dropout", "bce_loss", "gaussian_nll_loss",
    "OptimizerState", "RMSProp", "rmsprop_step",
    "encode_checkpoint", "decode_checkpoint", "save_checkpoint", "load_checkpoint",
]
