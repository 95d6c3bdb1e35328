"""Minimal reverse-mode differentiation engine used by every model variant."""

from .tensor import (
    DEFAULT_DTYPE,
    Graph,
    ParameterSet,
    Tensor,
    backward,
    fan_in_uniform,
    sgd_step,
)
from .ops import (
    concat,
    conv2d,
    conv3d,
    linear,
    maxpool,
    relu,
    reshape,
    softmax_cross_entropy,
)
from .checkpoint import (
    load_checkpoint,
    params_from_bytes,
    params_to_bytes,
    save_checkpoint,
)

__all__ = [
    "DEFAULT_DTYPE",
    "Graph",
    "ParameterSet",
    "Tensor",
    "backward",
    "concat",
    "conv2d",
    "conv3d",
    "fan_in_uniform",
    "linear",
    "load_checkpoint",
    "maxpool",
    "params_from_bytes",
    "params_to_bytes",
    "relu",
    "reshape",
    "save_checkpoint",
    "sgd_step",
    "softmax_cross_entropy",
]
