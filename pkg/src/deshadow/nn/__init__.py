"""Minimal differentiable numerical core: tensors, layer primitives, Adam,
and a finite-difference gradient-check oracle."""

from .conv import (
    conv2d,
    conv_output_extent,
    conv_transpose2d,
    conv_transpose_output_extent,
)
from .gradcheck import GradCheckEntry, GradCheckReport, grad_check
from .optim import AdamState, adam_step, init_adam
from .tensor import (
    Parameter,
    ParameterStore,
    Tensor,
    add_elementwise,
    backward,
    channel_mean,
    clamp,
    concat_channels,
    detach,
    finite_checks,
    l1_loss,
    mul_elementwise,
    no_grad,
    record_kinks,
    relu,
    scale,
    sigmoid,
    slice_channels,
)

__all__ = [
    "AdamState",
    "GradCheckEntry",
    "GradCheckReport",
    "Parameter",
    "ParameterStore",
    "Tensor",
    "adam_step",
    "add_elementwise",
    "backward",
    "channel_mean",
    "clamp",
    "concat_channels",
    "conv2d",
    "conv_output_extent",
    "conv_transpose2d",
    "conv_transpose_output_extent",
    "detach",
    "finite_checks",
    "grad_check",
    "init_adam",
    "l1_loss",
    "mul_elementwise",
    "no_grad",
    "record_kinks",
    "relu",
    "scale",
    "sigmoid",
    "slice_channels",
]
