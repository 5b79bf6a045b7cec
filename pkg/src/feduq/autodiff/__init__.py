"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .checkpoint import load_checkpoint, save_checkpoint
from .optim import AdamState, adam_step
from .special import EULER_MASCHERONI, digamma as digamma_value, trigamma as trigamma_value
from .tensor import (
    Tape,
    Tensor,
    adaptive_avgpool,
    add,
    backward,
    batchnorm1d,
    clamp_min,
    concat,
    constant,
    conv1d,
    digamma,
    div,
    dropout,
    layernorm,
    matmul,
    maxpool1d,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    sub,
    tlog,
    tmean,
    transpose,
    tsum,
    tvariance,
    zero_grads,
)

__all__ = [
    "AdamState",
    "EULER_MASCHERONI",
    "Tape",
    "Tensor",
    "adam_step",
    "adaptive_avgpool",
    "add",
    "backward",
    "batchnorm1d",
    "clamp_min",
    "concat",
    "constant",
    "conv1d",
    "digamma",
    "digamma_value",
    "div",
    "dropout",
    "layernorm",
    "load_checkpoint",
    "matmul",
    "maxpool1d",
    "mul",
    "neg",
    "relu",
    "reshape",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "softplus",
    "sub",
    "tlog",
    "tmean",
    "transpose",
    "trigamma_value",
    "tsum",
    "tvariance",
    "zero_grads",
]
