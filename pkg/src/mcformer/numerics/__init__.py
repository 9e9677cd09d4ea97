"""Minimal float64 tensor library with reverse-mode autodiff."""

from .gradcheck import analytic_grad, grad_check, numeric_grad
from .ops import (
    absolute,
    add,
    concat,
    div,
    dropout,
    elementwise,
    gelu,
    index,
    layer_norm,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    square,
    sub,
    swapaxes,
    transpose,
)
from .ops import sum as tsum
from .tensor import DTYPE, Tape, Tensor, as_tensor, backward, tensor_new, zero_grads

__all__ = [
    "DTYPE", "Tape", "Tensor", "absolute", "add", "analytic_grad", "as_tensor",
    "backward", "concat", "div", "dropout", "elementwise", "gelu", "grad_check",
    "index", "layer_norm", "matmul", "mean", "mul", "numeric_grad", "relu",
    "reshape", "scale", "softmax", "square", "sub", "swapaxes", "tensor_new",
    "transpose", "tsum", "zero_grads",
]
