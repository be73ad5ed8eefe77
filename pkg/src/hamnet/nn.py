"""Neural building blocks on top of the tensor primitives.

Transformer sublayers use the pre-norm arrangement x + Sublayer(LN(x)), so a
layer whose projection weights are all zero is exactly the identity. Biases
live only in feed-forward maps and output heads, not in attention
projections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

Activation = Callable[[Tensor], Tensor]

ACTIVATIONS: dict[str, Activation] = {
    "relu": T.relu,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation '{name}'; choose from {sorted(ACTIVATIONS)}")


class ParamStore:
    """Named registry of trainable tensors.

    Creation order is the rng consumption order, so a fixed seed and a fixed
    build sequence give bit-identical initializations. Stage grouping keys
    off the prefix before the first dot in the name.
    """

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.tensors: dict[str, Tensor] = {}

    def _register(self, name: str, t: Tensor) -> Tensor:
        if name in self.tensors:
            raise ConfigError(f"duplicate parameter name '{name}'")
        self.tensors[name] = t
        return t

    def normal(self, name: str, shape: tuple[int, ...], std: float = 0.02) -> Tensor:
        return self._register(name, T.parameter(self.rng.normal(0.0, std, size=shape)))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._register(name, T.parameter(np.zeros(shape)))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._register(name, T.parameter(np.ones(shape)))

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def stages(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {}
        for name in self.tensors:
            groups.setdefault(name.split(".", 1)[0], []).append(name)
        return groups

    def by_stage(self, stage: str) -> dict[str, Tensor]:
        prefix = stage + "."
        return {n: t for n, t in self.tensors.items() if n.startswith(prefix)}


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b). Accepts (m, k) or (k,) inputs; w is (k, n)."""
    out = T.matmul(x, w)
    if b is not None:
        if out.data.ndim == 2:
            out = T.add_bias(out, b)
        else:
            out = T.add(out, b)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Row layer norm with affine gain/shift."""
    normed = T.layer_norm_rows(x, eps=eps)
    m = x.data.shape[0]
    return T.add_bias(T.mul(normed, T.tile_rows(gain, m)), bias)


# ---------------------------------------------------------------------------
# attention


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


def init_attention(store: ParamStore, prefix: str, d: int) -> AttentionParams:
    return AttentionParams(
        wq=store.normal(f"{prefix}.wq", (d, d)),
        wk=store.normal(f"{prefix}.wk", (d, d)),
        wv=store.normal(f"{prefix}.wv", (d, d)),
        wo=store.normal(f"{prefix}.wo", (d, d)),
    )


def multi_head_attention(
    q: Tensor, k: Tensor, v: Tensor, params: AttentionParams, heads: int
) -> Tensor:
    """Scaled dot-product attention with ``heads`` parallel heads.

    q is (m, d); k and v are (n, d) with n >= 1. Returns the (m, d) output
    projection; residual connections are the caller's business. Attention
    weights are proper distributions: each row of softmax(QK^T / sqrt(dh))
    sums to one.
    """
    d = q.data.shape[1]
    if heads <= 0 or d % heads != 0:
        raise ConfigError(f"attention width {d} is not divisible by heads={heads}")
    if k.data.shape[0] == 0:
        raise ShapeError("multi_head_attention: no keys to attend over")
    if k.data.shape != v.data.shape:
        raise ShapeError(f"multi_head_attention: k/v shape mismatch "
                         f"{k.data.shape} vs {v.data.shape}")
    dh = d // heads
    qp = T.matmul(q, params.wq)
    kp = T.matmul(k, params.wk)
    vp = T.matmul(v, params.wv)
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qh = T.slice_cols(qp, lo, hi)
        kh = T.slice_cols(kp, lo, hi)
        vh = T.slice_cols(vp, lo, hi)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / np.sqrt(dh))
        weights = T.softmax_rows(scores)
        outs.append(T.matmul(weights, vh))
    merged = outs[0] if heads == 1 else T.concat(outs, axis=1)
    return T.matmul(merged, params.wo)


# ---------------------------------------------------------------------------
# feed-forward


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def init_feed_forward(store: ParamStore, prefix: str, d_in: int, d_hidden: int,
                      d_out: int) -> FeedForwardParams:
    return FeedForwardParams(
        w1=store.normal(f"{prefix}.w1", (d_in, d_hidden)),
        b1=store.zeros(f"{prefix}.b1", (d_hidden,)),
        w2=store.normal(f"{prefix}.w2", (d_hidden, d_out)),
        b2=store.zeros(f"{prefix}.b2", (d_out,)),
    )


def feed_forward(x: Tensor, p: FeedForwardParams, act: Activation) -> Tensor:
    """Two-layer position-wise map: act(x W1 + b1) W2 + b2."""
    return linear(act(linear(x, p.w1, p.b1)), p.w2, p.b2)


# ---------------------------------------------------------------------------
# encoder layers


@dataclass
class EncoderLayerParams:
    ln1_g: Tensor
    ln1_b: Tensor
    attn: AttentionParams
    ln2_g: Tensor
    ln2_b: Tensor
    ffn: FeedForwardParams


def init_encoder_layer(store: ParamStore, prefix: str, d: int,
                       ffn_mult: int = 2) -> EncoderLayerParams:
    return EncoderLayerParams(
        ln1_g=store.ones(f"{prefix}.ln1_g", (d,)),
        ln1_b=store.zeros(f"{prefix}.ln1_b", (d,)),
        attn=init_attention(store, f"{prefix}.attn", d),
        ln2_g=store.ones(f"{prefix}.ln2_g", (d,)),
        ln2_b=store.zeros(f"{prefix}.ln2_b", (d,)),
        ffn=init_feed_forward(store, f"{prefix}.ffn", d, ffn_mult * d, d),
    )


def _maybe_dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate > 0.0:
        if rng is None:
            raise ConfigError("dropout enabled but no rng supplied")
        return T.dropout(x, rate, rng)
    return x


def encoder_layer(x: Tensor, p: EncoderLayerParams, heads: int, act: Activation,
                  dropout_rate: float = 0.0,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Self-attention transformer layer, pre-norm."""
    h = layer_norm(x, p.ln1_g, p.ln1_b)
    a = multi_head_attention(h, h, h, p.attn, heads)
    x = T.add(x, _maybe_dropout(a, dropout_rate, rng))
    f = feed_forward(layer_norm(x, p.ln2_g, p.ln2_b), p.ffn, act)
    return T.add(x, _maybe_dropout(f, dropout_rate, rng))


@dataclass
class CrossLayerParams:
    ln_q_g: Tensor
    ln_q_b: Tensor
    ln_kv_g: Tensor
    ln_kv_b: Tensor
    attn: AttentionParams
    ln2_g: Tensor
    ln2_b: Tensor
    ffn: FeedForwardParams


def init_cross_layer(store: ParamStore, prefix: str, d: int,
                     ffn_mult: int = 2) -> CrossLayerParams:
    return CrossLayerParams(
        ln_q_g=store.ones(f"{prefix}.ln_q_g", (d,)),
        ln_q_b=store.zeros(f"{prefix}.ln_q_b", (d,)),
        ln_kv_g=store.ones(f"{prefix}.ln_kv_g", (d,)),
        ln_kv_b=store.zeros(f"{prefix}.ln_kv_b", (d,)),
        attn=init_attention(store, f"{prefix}.attn", d),
        ln2_g=store.ones(f"{prefix}.ln2_g", (d,)),
        ln2_b=store.zeros(f"{prefix}.ln2_b", (d,)),
        ffn=init_feed_forward(store, f"{prefix}.ffn", d, ffn_mult * d, d),
    )


def cross_layer(x: Tensor, memory: Tensor | None, p: CrossLayerParams, heads: int,
                act: Activation, dropout_rate: float = 0.0,
                rng: np.random.Generator | None = None) -> Tensor:
    """Cross-attention transformer layer: queries from x, keys/values from memory.

    With no memory rows to attend over (memory None or empty) the attention
    sublayer is skipped and only the feed-forward sublayer applies.
    """
    if memory is not None and memory.data.shape[0] > 0:
        h = layer_norm(x, p.ln_q_g, p.ln_q_b)
        m = layer_norm(memory, p.ln_kv_g, p.ln_kv_b)
        a = multi_head_attention(h, m, m, p.attn, heads)
        x = T.add(x, _maybe_dropout(a, dropout_rate, rng))
    f = feed_forward(layer_norm(x, p.ln2_g, p.ln2_b), p.ffn, act)
    return T.add(x, _maybe_dropout(f, dropout_rate, rng))
