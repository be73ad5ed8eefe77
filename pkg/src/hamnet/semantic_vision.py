"""Semantic vision path: object/image embedding plus a ViT-style encoder.

The vision sequence is [global image state; object states]. It carries no
positional encodings at all, so the encoder output is equivariant to
object permutations and the global state is invariant to them (up to
floating-point reduction order). Object semantics enter twice: a linear
projection of the detector feature plus a learned embedding of the
detector's concept class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import ObjectDetection
from .errors import ShapeError
from .nn import (Activation, EncoderLayerParams, ParamStore, encoder_layer,
                 init_encoder_layer, linear)
from .tensor import Tensor


@dataclass
class VisionSequence:
    img: Tensor      # (d,) global image state
    objects: Tensor  # (N, d) per-object states, N may be 0


@dataclass
class SemanticVisionParams:
    img_w: Tensor       # (d_v, d)
    img_b: Tensor       # (d,)
    obj_w: Tensor       # (d_v, d)
    obj_b: Tensor       # (d,)
    concept_emb: Tensor  # (concept_vocab, d)
    layers: list[EncoderLayerParams]


def init_semantic_vision(store: ParamStore, d: int, d_v: int, concept_vocab: int,
                         n_layers: int, prefix: str = "vision_sem") -> SemanticVisionParams:
    return SemanticVisionParams(
        img_w=store.normal(f"{prefix}.img_w", (d_v, d)),
        img_b=store.zeros(f"{prefix}.img_b", (d,)),
        obj_w=store.normal(f"{prefix}.obj_w", (d_v, d)),
        obj_b=store.zeros(f"{prefix}.obj_b", (d,)),
        concept_emb=store.normal(f"{prefix}.concept_emb", (concept_vocab, d)),
        layers=[init_encoder_layer(store, f"{prefix}.vit{i}", d) for i in range(n_layers)],
    )


def project_image(image_feat: np.ndarray, params: SemanticVisionParams) -> Tensor:
    """Map the raw global image feature (d_v,) into model space (d,)."""
    if image_feat.shape != (params.img_w.data.shape[0],):
        raise ShapeError(f"project_image: feature shape {image_feat.shape} != "
                         f"({params.img_w.data.shape[0]},)")
    return linear(T.constant(image_feat), params.img_w, params.img_b)


def embed_objects(objects: list[ObjectDetection], params: SemanticVisionParams) -> Tensor:
    """Projected detector features plus concept embeddings, one row per object.

    Returns a (N, d) tensor; N = 0 yields an empty (0, d) tensor.
    """
    d_v, d = params.obj_w.data.shape
    vocab = params.concept_emb.data.shape[0]
    if not objects:
        return T.constant(np.zeros((0, d)))
    feats = np.stack([o.feat for o in objects])
    if feats.shape[1] != d_v:
        raise ShapeError(f"embed_objects: feature width {feats.shape[1]} != {d_v}")
    ids = []
    for i, o in enumerate(objects):
        if not (0 <= o.concept_id < vocab):
            raise ShapeError(f"embed_objects: object {i} concept_id {o.concept_id} "
                             f"outside [0, {vocab})")
        ids.append(o.concept_id)
    projected = linear(T.constant(feats), params.obj_w, params.obj_b)
    return T.add(projected, T.gather_rows(params.concept_emb, np.asarray(ids)))


def vit_encode(seq: VisionSequence, params: SemanticVisionParams, heads: int,
               act: Activation, dropout_rate: float = 0.0,
               rng: np.random.Generator | None = None) -> VisionSequence:
    """Run [img; objects] through the encoder stack (no positional encodings)."""
    d = seq.img.data.shape[0]
    n = seq.objects.data.shape[0]
    x = T.concat([T.reshape(seq.img, (1, d)), seq.objects], axis=0)
    for layer in params.layers:
        x = encoder_layer(x, layer, heads, act, dropout_rate, rng)
    return VisionSequence(img=T.take_row(x, 0), objects=T.slice_rows(x, 1, n + 1))
