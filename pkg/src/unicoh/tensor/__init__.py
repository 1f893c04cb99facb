from .core import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    bilinear,
    concat,
    default_dtype,
    depthwise_conv1d,
    div,
    exp,
    getitem,
    log,
    log_softmax,
    lstm_sequence,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    pad,
    pick,
    precision,
    relu,
    reshape,
    segment_sum,
    sigmoid,
    softmax,
    sub,
    take,
    tanh,
    transpose,
    tsum,
)
from .gradcheck import GradCheckError, grad_check
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam",
    "AdamState",
    "GradCheckError",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "bilinear",
    "concat",
    "default_dtype",
    "depthwise_conv1d",
    "div",
    "exp",
    "getitem",
    "grad_check",
    "log",
    "log_softmax",
    "lstm_sequence",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "pad",
    "pick",
    "precision",
    "relu",
    "reshape",
    "segment_sum",
    "sigmoid",
    "softmax",
    "sub",
    "take",
    "tanh",
    "transpose",
    "tsum",
]
