"""Differentiable computation substrate used by the rest of the package."""

from . import autodiff as ad
from .autodiff import Tensor, backward, no_grad
from .gumbel import binary_gumbel_softmax, gumbel_softmax
from .nn import LayerNorm, Linear, MlpBlock, Module
from .optim import AdamState, adam_init, adam_step
from .rng import RngStream, as_stream
from .spline import RqSpline, spline_forward, spline_inverse

__all__ = [
    "AdamState",
    "LayerNorm",
    "Linear",
    "MlpBlock",
    "Module",
    "RngStream",
    "RqSpline",
    "Tensor",
    "ad",
    "adam_init",
    "adam_step",
    "as_stream",
    "backward",
    "binary_gumbel_softmax",
    "gumbel_softmax",
    "no_grad",
    "spline_forward",
    "spline_inverse",
]
