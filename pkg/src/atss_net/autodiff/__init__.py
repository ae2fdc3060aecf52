"""Minimal dense-tensor engine with reverse-mode autodiff, Adam and a gradient checker."""
from .adam import AdamState, adam_step
from .functional import (
    add,
    concat,
    conv2d,
    cross_entropy,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    square,
    stat_pool,
    transpose,
)
from .gradcheck import GradCheckResult, grad_check, numeric_grad
from .tensor import Tensor, as_tensor, default_dtype, grad_enabled, kink_log, no_grad, precision

__all__ = [
    "AdamState", "GradCheckResult", "Tensor", "kink_log", "add", "adam_step", "as_tensor", "concat", "conv2d", "cross_entropy",
    "default_dtype", "grad_check", "grad_enabled", "layer_norm", "linear", "log_softmax", "matmul",
    "mean", "mul", "no_grad", "numeric_grad", "precision", "relu", "reshape", "sigmoid", "softmax",
    "square", "stat_pool", "transpose",
]
