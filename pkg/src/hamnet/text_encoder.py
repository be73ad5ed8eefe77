"""Sentence-level transformer over precomputed word features.

The input sequence is [CLS feature; word features], optionally offset by
learned positional embeddings (position 0 belongs to the CLS slot), then
run through self-attention encoder layers. Word features arrive frozen in
the fixtures; only the layers here train.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import MAX_TOKENS, TaggedSentence
from .errors import ShapeError
from .nn import (Activation, EncoderLayerParams, ParamStore, encoder_layer,
                 init_encoder_layer)
from .tensor import Tensor


@dataclass
class TextEncoding:
    cls: Tensor     # (d,) sentence-global state
    words: Tensor   # (M, d) per-word states


@dataclass
class TextEncoderParams:
    positional: Tensor | None     # (MAX_TOKENS + 1, d) or None when disabled
    layers: list[EncoderLayerParams]


def init_text_encoder(store: ParamStore, d: int, n_layers: int,
                      positional: bool = True,
                      prefix: str = "text") -> TextEncoderParams:
    pos = store.normal(f"{prefix}.pos", (MAX_TOKENS + 1, d)) if positional else None
    layers = [init_encoder_layer(store, f"{prefix}.layer{i}", d) for i in range(n_layers)]
    return TextEncoderParams(positional=pos, layers=layers)


def encode_text(sentence: TaggedSentence, params: TextEncoderParams, heads: int,
                act: Activation, dropout_rate: float = 0.0,
                rng: np.random.Generator | None = None) -> TextEncoding:
    m, d = sentence.word_feats.shape
    if m == 0:
        raise ShapeError("encode_text: empty sentence")
    if sentence.cls_feat.shape != (d,):
        raise ShapeError(f"encode_text: cls_feat shape {sentence.cls_feat.shape} != ({d},)")
    seq = T.concat(
        [T.reshape(T.constant(sentence.cls_feat), (1, d)), T.constant(sentence.word_feats)],
        axis=0,
    )
    if params.positional is not None:
        seq = T.add(seq, T.gather_rows(params.positional, np.arange(m + 1)))
    for layer in params.layers:
        seq = encoder_layer(seq, layer, heads, act, dropout_rate, rng)
    return TextEncoding(cls=T.take_row(seq, 0), words=T.slice_rows(seq, 1, m + 1))
