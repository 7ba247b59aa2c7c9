"""Deterministic float64 tensor engine with reverse-mode autodiff."""

from . import kernels
from .gradcheck import check_gradients, numerical_grad, relative_error
from .nn import MLP, LayerNorm, Linear, Module, make_rng, parameter
from .tensor import (
    DimensionError,
    Tensor,
    UsageError,
    add,
    as_tensor,
    avg_pool2d,
    concat,
    conv3d,
    exp,
    gelu,
    getitem,
    grad_enabled,
    layer_norm,
    linear,
    matmul,
    mean,
    mse_loss,
    mul,
    no_grad,
    reshape,
    softmax,
    sub,
    take,
    tanh,
    topological_order,
    transpose,
    tsum,
)
