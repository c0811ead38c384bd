from .tensor import (
    ContractError,
    DimensionError,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    conv2d,
    div,
    elementwise,
    embedding,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    resize_bilinear,
    scale,
    set_debug,
    sigmoid,
    softmax,
    softplus,
    sub,
    sum_,
    swapaxes,
    tanh,
    transpose,
)
from .params import INIT_SCHEME, ParamStore, make_rng
from .optim import AdamState, adam_step, scheduled_lr
from . import checkpoint

__all__ = [
    "AdamState", "ContractError", "DimensionError", "INIT_SCHEME", "ParamStore", "Tensor",
    "adam_step", "add", "as_tensor", "backward", "broadcast_to", "checkpoint", "concat",
    "conv2d", "div", "elementwise", "embedding", "exp", "getitem", "log", "make_rng",
    "matmul", "mean", "mul", "no_grad", "relu", "reshape", "resize_bilinear", "scale",
    "set_debug", "sigmoid", "softmax", "softplus", "sub", "scheduled_lr", "sum_", "swapaxes",
    "tanh", "transpose",
]
