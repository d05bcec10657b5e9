"""Minimal differentiable-computation core used by every trainable module."""

from .checkpoint import load_params, save_params
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericsError,
    ShapeError,
)
from .gradcheck import GradCheckReport, fd_gradient, grad_check, grad_check_loss
from .layers import (
    Conv2d,
    Dense,
    GlobalAvgPool,
    LeakyReLU,
    Reshape,
    Tanh,
    UpsampleNearest,
)
from .losses import bce_with_logits, sigmoid, softmax, softmax_cross_entropy
from .net import Net, merge_grads
from .params import AdamConfig, ParamTree, adam_step, orthogonal_init, stream_rng

__all__ = [
    "AdamConfig",
    "CheckpointError",
    "ConfigError",
    "Conv2d",
    "DataError",
    "Dense",
    "GlobalAvgPool",
    "GradCheckReport",
    "LeakyReLU",
    "Net",
    "NumericsError",
    "ParamTree",
    "Reshape",
    "ShapeError",
    "Tanh",
    "UpsampleNearest",
    "adam_step",
    "bce_with_logits",
    "fd_gradient",
    "grad_check",
    "grad_check_loss",
    "load_params",
    "merge_grads",
    "orthogonal_init",
    "save_params",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "stream_rng",
]
