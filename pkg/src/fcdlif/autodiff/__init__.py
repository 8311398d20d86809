"""Minimal deterministic tensor library with reverse-mode differentiation."""

from .tensor import Tensor, parameter, no_grad
from .ops import (
    add,
    add_channel_bias,
    adaptive_avg_pool,
    conv1d,
    conv3d,
    instance_norm,
    matvec,
    maxpool3d,
    mul,
    relu,
    reshape,
    residual_add,
    same_padding,
    stack_columns,
    sub,
    tensor_sum,
)
from .optim import AdamState, adam_step
from .gradcheck import finite_difference_grad, max_relative_error

__all__ = [
    "Tensor",
    "parameter",
    "no_grad",
    "add",
    "add_channel_bias",
    "adaptive_avg_pool",
    "conv1d",
    "conv3d",
    "instance_norm",
    "matvec",
    "maxpool3d",
    "mul",
    "relu",
    "reshape",
    "residual_add",
    "same_padding",
    "stack_columns",
    "sub",
    "tensor_sum",
    "AdamState",
    "adam_step",
    "finite_difference_grad",
    "max_relative_error",
]
