from .checkpoint import load_tensors, save_tensors
from .core import (
    Adam,
    AdamState,
    Tensor,
    adam_step,
    add,
    avg_pool_pairs,
    backward,
    clamp,
    concat,
    conv1d,
    crop,
    exp,
    gaussian_logcdf,
    gaussian_nll,
    log,
    matmul,
    maximum_const,
    mul,
    neg,
    reduce_mean,
    reduce_sum,
    relu,
    repeat_pairs,
    reshape,
    softmax_cross_entropy,
    sub,
    tensor,
    topo_order,
    transpose2d,
    transposed_conv1d,
    zero_grads,
)

__all__ = [
    "Adam",
    "AdamState",
    "Tensor",
    "adam_step",
    "add",
    "avg_pool_pairs",
    "backward",
    "clamp",
    "concat",
    "conv1d",
    "crop",
    "exp",
    "gaussian_logcdf",
    "gaussian_nll",
    "load_tensors",
    "log",
    "matmul",
    "maximum_const",
    "mul",
    "neg",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "repeat_pairs",
    "reshape",
    "save_tensors",
    "softmax_cross_entropy",
    "sub",
    "tensor",
    "topo_order",
    "transpose2d",
    "transposed_conv1d",
    "zero_grads",
]
