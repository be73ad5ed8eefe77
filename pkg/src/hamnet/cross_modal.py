"""Iterative cross-modal interaction between word states and vision views.

Each round runs three cross-attention parts against the state committed by
the previous round, synchronously: the word states attend over a gated
fusion of the two vision views, while each vision view attends over the
raw word states. All three read the same committed snapshot, so the order
in which the parts are computed cannot change the result; the new states
are committed together at the end of the round. One shared parameter set
serves every round.

The view fusion blends per coordinate: alpha = sigmoid(W_v inner(W_v1 V1 +
W_v2 V2)), V = alpha * V1 + (1 - alpha) * V2. The sigmoid keeps the blend
a proper convex combination; the raw unbounded blend weight remains
available behind bounded_gate=False for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import (Activation, CrossLayerParams, FeedForwardParams, ParamStore,
                 cross_layer, feed_forward, init_cross_layer, init_feed_forward)
from .tensor import Tensor


@dataclass
class CrossModalParams:
    bridge: FeedForwardParams      # 2-layer map lifting word states into the shared space
    gate_w: Tensor                 # (d, d) outer gate map
    gate_w1: Tensor                # (d, d) view-1 inner map
    gate_w2: Tensor                # (d, d) view-2 inner map
    text_part: CrossLayerParams    # words attend over fused vision
    v1_part: CrossLayerParams      # view 1 attends over words
    v2_part: CrossLayerParams      # view 2 attends over words


def init_cross_modal(store: ParamStore, d: int, prefix: str = "cross") -> CrossModalParams:
    return CrossModalParams(
        bridge=init_feed_forward(store, f"{prefix}.bridge", d, d, d),
        gate_w=store.normal(f"{prefix}.gate.w", (d, d)),
        gate_w1=store.normal(f"{prefix}.gate.w1", (d, d)),
        gate_w2=store.normal(f"{prefix}.gate.w2", (d, d)),
        text_part=init_cross_layer(store, f"{prefix}.text_part", d),
        v1_part=init_cross_layer(store, f"{prefix}.v1_part", d),
        v2_part=init_cross_layer(store, f"{prefix}.v2_part", d),
    )


def bridge_text(words: Tensor, params: CrossModalParams, act: Activation) -> Tensor:
    """Lift word states into the interaction space with a 2-layer map."""
    return feed_forward(words, params.bridge, act)


def fuse_views(v1: Tensor, v2: Tensor, params: CrossModalParams,
               bounded_gate: bool = True) -> Tensor:
    """Coordinate-wise blend of the two vision views.

    With the bounded gate each output component lies between the two input
    components. The unbounded variant uses the raw inner map output as the
    blend weight instead.
    """
    if v1.data.shape != v2.data.shape:
        raise ShapeError(f"fuse_views: view shapes differ, {v1.data.shape} "
                         f"vs {v2.data.shape}")
    inner = T.tanh(T.add(T.matmul(v1, params.gate_w1), T.matmul(v2, params.gate_w2)))
    raw = T.matmul(inner, params.gate_w)
    alpha = T.sigmoid(raw) if bounded_gate else raw
    ones = T.constant(np.ones(alpha.data.shape))
    return T.add(T.mul(alpha, v1), T.mul(T.sub(ones, alpha), v2))


@dataclass
class InteractionState:
    words: Tensor  # (M, d)
    v1: Tensor     # (N, d)
    v2: Tensor     # (N, d)


def interact(words: Tensor, v1: Tensor, v2: Tensor, params: CrossModalParams,
             heads: int, rounds: int, act: Activation,
             bounded_gate: bool = True, dropout_rate: float = 0.0,
             rng: np.random.Generator | None = None) -> InteractionState:
    """Run ``rounds`` synchronous interaction rounds and return all states.

    With zero objects the vision parts are skipped and the word part
    degenerates to its feed-forward sublayer (there is nothing to attend
    over), but the word states still move so the stack stays trainable.
    """
    if rounds < 0:
        raise ShapeError(f"interact: negative round count {rounds}")
    h = bridge_text(words, params, act)
    n = v1.data.shape[0]
    if v1.data.shape != v2.data.shape:
        raise ShapeError(f"interact: view shapes differ, {v1.data.shape} "
                         f"vs {v2.data.shape}")
    for _ in range(rounds):
        if n > 0:
            fused = fuse_views(v1, v2, params, bounded_gate)
            h_next = cross_layer(h, fused, params.text_part, heads, act,
                                 dropout_rate, rng)
            v1_next = cross_layer(v1, h, params.v1_part, heads, act,
                                  dropout_rate, rng)
            v2_next = cross_layer(v2, h, params.v2_part, heads, act,
                                  dropout_rate, rng)
            h, v1, v2 = h_next, v1_next, v2_next
        else:
            h = cross_layer(h, None, params.text_part, heads, act,
                            dropout_rate, rng)
    return InteractionState(words=h, v1=v1, v2=v2)
