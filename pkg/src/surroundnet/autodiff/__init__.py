"""Minimal dense tensor engine with reverse-mode differentiation."""

from .conv import conv1d, conv2d
from .gradcheck import GradCheckReport, gradient_check
from .tensor import (
    DomainError,
    ShapeError,
    Tensor,
    abs,
    add,
    backward,
    broadcast_to,
    clamp,
    concat,
    cumsum,
    div,
    elementwise,
    exp,
    flip,
    getitem,
    global_avg_pool,
    is_grad_enabled,
    log,
    log1p,
    mean,
    mul,
    neg,
    no_grad,
    pow,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    sqrt,
    structural,
    sub,
    sum,
    tensor,
    zero_grad,
)
