"""Minimal float64 tensor kernel with reverse-mode differentiation."""

from .layers import (
    EncoderLayerParams, MLPParams, encoder_forward, feed_forward, key_padding_bias,
    multi_head_attention,
)
from .optim import AdamState, adam_step, clip_grad_norm, zero_grad
from .tensor import (
    Tensor, add, as_tensor, backward, concat, getitem, layer_norm, linear, matmul,
    mse, mul, no_grad, parameter, relu, reshape, softmax, take, topological_order,
    transpose, tsum,
)

__all__ = [
    "AdamState", "EncoderLayerParams", "MLPParams", "Tensor", "adam_step", "add",
    "as_tensor", "backward", "clip_grad_norm", "concat", "encoder_forward", "feed_forward", "getitem",
    "key_padding_bias", "layer_norm", "linear", "matmul", "mse", "mul",
    "multi_head_attention", "no_grad", "parameter", "relu", "reshape", "softmax",
    "take", "topological_order", "transpose", "tsum", "zero_grad",
]
