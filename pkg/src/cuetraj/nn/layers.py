"""Transformer building blocks: attention, feed-forward and encoder stacks.

Layout is post-norm: ``h = LN(x + MHA(x))`` then ``y = LN(h + FFN(h))`` with
a ReLU feed-forward of width ``ff_mult * D``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..errors import ConfigError, DimensionError
from .tensor import (
    Tensor, layer_norm, linear, matmul, parameter, relu, reshape, softmax,
    transpose,
)

INIT_STD = 0.02


def normal(rng: np.random.Generator, shape, name: str, std: float = INIT_STD) -> Tensor:
    return parameter(rng.normal(0.0, std, size=shape), name=name)


def dense(rng: np.random.Generator, n_in: int, n_out: int, name: str) -> Tensor:
    """Weight matrix with variance ``1 / n_in`` so activations keep their scale."""
    return normal(rng, (n_in, n_out), name, std=1.0 / np.sqrt(n_in))


def zeros(shape, name: str) -> Tensor:
    return parameter(np.zeros(shape), name=name)


def ones(shape, name: str) -> Tensor:
    return parameter(np.ones(shape), name=name)


@dataclass
class EncoderLayerParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln2_g: Tensor
    ln2_b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, ff_mult: int = 4) -> "EncoderLayerParams":
        h = ff_mult * d
        return cls(
            wq=dense(rng, d, d, "wq"), bq=zeros(d, "bq"),
            wk=dense(rng, d, d, "wk"), bk=zeros(d, "bk"),
            wv=dense(rng, d, d, "wv"), bv=zeros(d, "bv"),
            wo=dense(rng, d, d, "wo"), bo=zeros(d, "bo"),
            ln1_g=ones(d, "ln1_g"), ln1_b=zeros(d, "ln1_b"),
            ff_w1=dense(rng, d, h, "ff_w1"), ff_b1=zeros(h, "ff_b1"),
            ff_w2=dense(rng, h, d, "ff_w2"), ff_b2=zeros(d, "ff_b2"),
            ln2_g=ones(d, "ln2_g"), ln2_b=zeros(d, "ln2_b"),
        )

    @property
    def width(self) -> int:
        return self.wq.shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{f.name}": getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_named(cls, tensors: dict[str, Tensor], prefix: str) -> "EncoderLayerParams":
        return cls(**{f.name: tensors[f"{prefix}.{f.name}"] for f in fields(cls)})


def key_padding_bias(valid: np.ndarray) -> np.ndarray:
    """(B, S) boolean validity -> additive bias of shape (B, 1, 1, S)."""
    bias = np.where(valid, 0.0, -np.inf)
    return bias[:, None, None, :]


def multi_head_attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    p: EncoderLayerParams,
    heads: int,
    key_bias: np.ndarray | None = None,
    capture: bool = False,
) -> tuple[Tensor, np.ndarray | None]:
    """Scaled dot-product attention over ``heads`` subspaces.

    Inputs are ``(S, D)`` or batched ``(B, S, D)``.  Returns the attended
    tokens and, when ``capture`` is set, the weights ``(B, heads, Sq, Sk)``
    (without the batch axis for unbatched input).
    """
    squeeze = queries.ndim == 2
    if squeeze:
        queries, keys, values = (reshape(t, (1,) + t.shape) for t in (queries, keys, values))
    b, sq, d = queries.shape
    sk = keys.shape[1]
    if d % heads:
        raise ConfigError(f"{heads} heads do not divide model width {d}")
    if keys.shape != values.shape or keys.shape[0] != b or keys.shape[2] != d:
        raise DimensionError(f"attention shapes {queries.shape}, {keys.shape}, {values.shape}")
    dh = d // heads

    def split(t, n):
        return transpose(reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))

    q = split(linear(queries, p.wq, p.bq), sq)
    k = split(linear(keys, p.wk, p.bk), sk)
    v = split(linear(values, p.wv, p.bv), sk)
    scores = matmul(q, transpose(k, (0, 1, 3, 2)))
    weights = softmax(scores, key_bias, scale=1.0 / np.sqrt(dh))
    ctx = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (b, sq, d))
    out = linear(ctx, p.wo, p.bo)
    captured = weights.data.copy() if capture else None
    if squeeze:
        out = reshape(out, (sq, d))
        captured = None if captured is None else captured[0]
    return out, captured


def feed_forward(x: Tensor, p: EncoderLayerParams) -> Tensor:
    return linear(relu(linear(x, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2)


def encoder_layer(x, p, heads, key_bias=None, capture=False):
    att, w = multi_head_attention(x, x, x, p, heads, key_bias, capture)
    h = layer_norm(x + att, p.ln1_g, p.ln1_b)
    return layer_norm(h + feed_forward(h, p), p.ln2_g, p.ln2_b), w


def encoder_forward(
    tokens: Tensor,
    layers: list[EncoderLayerParams],
    heads: int,
    key_bias: np.ndarray | None = None,
    capture: bool = False,
) -> tuple[Tensor, list[np.ndarray]]:
    """Run a stack of encoder layers; shape is preserved.

    Returns the output tokens and the per-layer attention weights (empty
    unless ``capture``).
    """
    if tokens.ndim not in (2, 3) or tokens.shape[-2] < 1:
        raise DimensionError(f"encoder expects (S, D) or (B, S, D) tokens, got {tokens.shape}")
    maps = []
    x = tokens
    for p in layers:
        if p.width != x.shape[-1]:
            raise DimensionError(f"layer width {p.width} does not match tokens {x.shape}")
        x, w = encoder_layer(x, p, heads, key_bias, capture)
        if capture:
            maps.append(w)
    return x, maps


@dataclass
class MLPParams:
    """Two-layer perceptron ``in -> hidden -> out`` with a ReLU."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng, n_in: int, n_hidden: int, n_out: int) -> "MLPParams":
        return cls(dense(rng, n_in, n_hidden, "w1"), zeros(n_hidden, "b1"),
                   dense(rng, n_hidden, n_out, "w2"), zeros(n_out, "b2"))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(relu(linear(x, self.w1, self.b1)), self.w2, self.b2)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{f.name}": getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_named(cls, tensors: dict[str, Tensor], prefix: str) -> "MLPParams":
        return cls(**{f.name: tensors[f"{prefix}.{f.name}"] for f in fields(cls)})
