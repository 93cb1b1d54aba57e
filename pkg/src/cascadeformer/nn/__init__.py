"""Small numpy reverse-mode autodiff engine with the kernels CascadeFormer needs."""

from .functional import (
    attention,
    conv1d_over_joints,
    cross_entropy,
    gelu,
    layer_norm,
    linear,
    masked_mse,
    masked_time_mean,
    relu,
    softmax,
)
from .gradcheck import GradCheckError, GradCheckReport, grad_check
from .layers import (
    ConfigError,
    Conv1d,
    Encoder,
    EncoderLayer,
    LayerNorm,
    Linear,
    Module,
    ModuleList,
    MultiHeadAttention,
)
from .optim import OptimizerState, cosine_lr, optimizer_step
from .rng import make_rng
from .tensor import NonFiniteError, ShapeError, Tensor, concat, no_grad

__all__ = [
    "ConfigError",
    "Conv1d",
    "Encoder",
    "EncoderLayer",
    "GradCheckError",
    "GradCheckReport",
    "LayerNorm",
    "Linear",
    "Module",
    "ModuleList",
    "MultiHeadAttention",
    "NonFiniteError",
    "OptimizerState",
    "ShapeError",
    "Tensor",
    "attention",
    "concat",
    "conv1d_over_joints",
    "cosine_lr",
    "cross_entropy",
    "gelu",
    "grad_check",
    "layer_norm",
    "linear",
    "make_rng",
    "masked_mse",
    "masked_time_mean",
    "no_grad",
    "optimizer_step",
    "relu",
    "softmax",
]
