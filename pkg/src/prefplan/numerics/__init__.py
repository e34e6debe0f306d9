"""Dense float32 tensors, reverse-mode gradients, Adam, and checkpoint IO."""

from .adam import AdamConfig, AdamState, adam_step
from .container import ContainerError, file_sha256, load_arrays, save_arrays
from .tensor import (
    NumericsError,
    Tensor,
    add,
    backward,
    broadcast_to,
    concat,
    div,
    dropout,
    embedding,
    gelu,
    getitem,
    grad,
    layer_norm,
    linear,
    logsigmoid,
    matmul,
    mul,
    no_grad,
    powc,
    relu,
    reshape,
    sigmoid,
    silu,
    softmax,
    square,
    sub,
    swapaxes,
    tanh,
    texp,
    tlog,
    tmean,
    tsqrt,
    tsum,
)

__all__ = [
    "AdamConfig", "AdamState", "adam_step",
    "ContainerError", "file_sha256", "load_arrays", "save_arrays",
    "NumericsError", "Tensor", "add", "backward", "broadcast_to", "concat",
    "div", "dropout", "embedding", "gelu", "getitem", "grad", "layer_norm",
    "linear", "logsigmoid", "matmul", "mul", "no_grad", "powc", "relu",
    "reshape", "sigmoid", "silu", "softmax", "square", "sub", "swapaxes",
    "tanh", "texp", "tlog", "tmean", "tsqrt", "tsum",
]
