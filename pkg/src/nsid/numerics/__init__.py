"""Minimal float64 reverse-mode autodiff, Adam, and gradient checking."""

from .gradcheck import grad_check, nudge_from_kinks
from .optim import Adam, AdamState, adam_step
from .tensor import (
    BatchNormStats,
    Graph,
    NonFiniteError,
    ShapeError,
    Tensor,
    UninitializedStatsError,
    add,
    as_tensor,
    backward,
    batchnorm,
    conv2d,
    einsum,
    identity,
    matmul,
    maximum,
    mul,
    no_grad,
    pad2d,
    pointwise,
    power,
    relu,
    reshape,
    set_debug,
    softplus,
    square,
    tabs,
    texp,
    tlog,
    tmean,
    tsqrt,
    tsum,
)

__all__ = [
    "Adam", "AdamState", "BatchNormStats", "Graph", "NonFiniteError", "ShapeError", "Tensor",
    "UninitializedStatsError", "adam_step", "add", "as_tensor", "backward", "batchnorm", "conv2d",
    "einsum", "grad_check", "identity", "matmul", "maximum", "mul", "no_grad", "nudge_from_kinks", "pad2d",
    "pointwise", "power", "relu", "reshape", "set_debug", "softplus", "square", "tabs", "texp",
    "tlog", "tmean", "tsqrt", "tsum",
]
