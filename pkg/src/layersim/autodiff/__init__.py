from .gradcheck import gradcheck, numerical_grad, relative_error
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    bmv,
    clamp_min,
    concat,
    cross,
    div,
    gather,
    is_grad_enabled,
    l2norm,
    matmul,
    mean,
    mse,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    segment_softmax,
    segment_sum,
    slice_,
    softmax,
    sqrt,
    square,
    sub,
    sum_,
    transpose,
)

__all__ = [
    "ShapeError", "Tensor", "add", "as_tensor", "backward", "bmv", "clamp_min", "concat",
    "cross", "div", "gather", "gradcheck", "is_grad_enabled", "l2norm", "matmul", "mean",
    "mse", "mul", "no_grad", "numerical_grad", "relative_error", "relu", "reshape", "scale",
    "segment_softmax", "segment_sum", "slice_", "softmax", "sqrt", "square", "sub", "sum_",
    "transpose",
]
