from .gradcheck import check_gradients
from .nn import BN_EPS, BatchNorm, Linear, MLP
from .params import ParamStore, stream_seed
from .tensor import (
    Tensor,
    add,
    concat,
    div,
    dropout,
    exp,
    gather_rows,
    l2_norm,
    log,
    matmul,
    max_reduce,
    mean_reduce,
    min_reduce,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    segment_max,
    segment_mean,
    segment_min,
    segment_std,
    segment_sum,
    sigmoid,
    softplus,
    sqrt,
    std_reduce,
    sub,
    sum_reduce,
    transpose,
)

__all__ = [
    "BN_EPS",
    "BatchNorm",
    "Linear",
    "MLP",
    "ParamStore",
    "Tensor",
    "add",
    "check_gradients",
    "concat",
    "div",
    "dropout",
    "exp",
    "gather_rows",
    "l2_norm",
    "log",
    "matmul",
    "max_reduce",
    "mean_reduce",
    "min_reduce",
    "mul",
    "neg",
    "no_grad",
    "relu",
    "reshape",
    "segment_max",
    "segment_mean",
    "segment_min",
    "segment_std",
    "segment_sum",
    "sigmoid",
    "softplus",
    "sqrt",
    "std_reduce",
    "stream_seed",
    "sub",
    "sum_reduce",
    "transpose",
]
