from .tensor import (
    DEFAULT_DTYPE,
    StrictMode,
    Tape,
    TapeError,
    Tensor,
    add,
    broadcast_to,
    concat,
    div,
    embedding,
    exp,
    gelu,
    matmul,
    mean,
    mse,
    mul,
    neg,
    pow_,
    reshape,
    softmax,
    sqrt,
    standardize,
    stop_gradient,
    sub,
    sum_,
    swapaxes,
    take,
    tanh,
    transpose,
)
from .layers import (
    Embedding,
    LayerNorm,
    Linear,
    MLP,
    Module,
    MultiHeadAttention,
    TransformerBlock,
    time_features,
)
from .optim import Adam
from .gradcheck import GradCheckReport, finite_diff_check

__all__ = [
    "DEFAULT_DTYPE", "StrictMode", "Tape", "TapeError", "Tensor",
    "add", "broadcast_to", "concat", "div", "embedding", "exp", "gelu",
    "matmul", "mean", "mse", "mul", "neg", "pow_", "reshape", "softmax",
    "sqrt", "standardize", "stop_gradient", "sub", "sum_", "swapaxes",
    "take", "tanh", "transpose",
    "Embedding", "LayerNorm", "Linear", "MLP", "Module",
    "MultiHeadAttention", "TransformerBlock", "time_features",
    "Adam", "GradCheckReport", "finite_diff_check",
]
