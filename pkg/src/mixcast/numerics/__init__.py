from .tensor import (
    Tensor,
    add,
    average,
    concat_last,
    dropout,
    gelu,
    layer_norm,
    linear,
    matmul,
    mean_all,
    mse_loss,
    mul,
    narrow,
    no_grad,
    relu,
    reshape,
    scale,
    softmax_attention,
    transpose,
)
from .optim import AdamState, ParamSet, adam_step
from .gradcheck import GradCheckResult, grad_check
from .rng import RunRng

__all__ = [
    "AdamState",
    "GradCheckResult",
    "ParamSet",
    "RunRng",
    "Tensor",
    "adam_step",
    "add",
    "average",
    "concat_last",
    "dropout",
    "gelu",
    "grad_check",
    "layer_norm",
    "linear",
    "matmul",
    "mean_all",
    "mse_loss",
    "mul",
    "narrow",
    "no_grad",
    "relu",
    "reshape",
    "scale",
    "softmax_attention",
    "transpose",
]
