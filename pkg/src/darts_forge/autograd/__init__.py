from .conv import conv2d, max_pool_downsample, pool2d
from .gradcheck import GradCheckReport, grad_check, numeric_grad, relative_error
from .ops import (
    ShapeError,
    activation,
    add,
    batch_norm,
    concat,
    div,
    exp,
    getitem,
    linear,
    log,
    log_softmax,
    lstm_cell,
    matmul,
    mean,
    mix,
    mul,
    neg,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sub,
    tanh,
    transpose,
)
from .ops import sum as sum_  # noqa: F401
from .serialize import (
    TensorFormatError,
    TruncatedPayloadError,
    load_tensor,
    save_tensor,
    tensor_from_bytes,
    tensor_to_bytes,
)
from .tensor import Tape, Tensor, as_tensor, backward, is_grad_enabled, no_grad, zero_grad

__all__ = [
    "Tape", "Tensor", "as_tensor", "backward", "no_grad", "is_grad_enabled", "zero_grad",
    "ShapeError", "activation", "add", "batch_norm", "concat", "conv2d", "div", "exp", "getitem",
    "linear", "log", "log_softmax", "lstm_cell", "matmul", "max_pool_downsample", "mean", "mix",
    "mul", "neg", "pool2d", "power", "relu", "reshape", "sigmoid", "softmax", "stack", "sub", "sum_", "tanh",
    "transpose", "GradCheckReport", "grad_check", "numeric_grad", "relative_error",
    "TensorFormatError", "TruncatedPayloadError", "load_tensor", "save_tensor",
    "tensor_from_bytes", "tensor_to_bytes",
]
