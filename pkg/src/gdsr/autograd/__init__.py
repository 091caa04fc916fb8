"""Minimal reverse-mode tensor engine backed by numpy."""

from . import functional
from .functional import (
    activation,
    concat,
    conv2d,
    depthwise_conv2d,
    l1_loss,
    layer_norm,
    leaky_relu,
    linear,
    pixel_shuffle,
    pixel_unshuffle,
    sigmoid,
    squared_relu,
)
from .gradcheck import grad_check, numerical_gradient
from .module import Module, Parameter
from .rng import make_rng, split
from .tensor import (
    DimensionError,
    GeometryError,
    NumericError,
    Tensor,
    UsageError,
    as_tensor,
    deterministic,
    is_deterministic,
    no_grad,
    tensor,
)

__all__ = [
    "DimensionError", "GeometryError", "Module", "NumericError", "Parameter", "Tensor",
    "UsageError", "activation", "as_tensor", "concat", "conv2d", "depthwise_conv2d",
    "deterministic", "functional", "grad_check", "is_deterministic", "l1_loss", "layer_norm",
    "leaky_relu", "linear", "make_rng", "no_grad", "numerical_gradient", "pixel_shuffle",
    "pixel_unshuffle", "sigmoid", "split", "squared_relu", "tensor",
]
