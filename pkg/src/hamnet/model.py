"""End-to-end pipeline assembly: encoders, relevance gating, interaction, CRF.

One forward pass per example (sentences vary in length and object count,
so there is no cross-example batching; batches accumulate gradients over
per-example passes in a fixed order).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import PipelineConfig
from .crf import (EmissionTable, TransitionTable, bio2_forbidden_mask, init_crf,
                  nll_loss, viterbi)
from .cross_modal import (CrossModalParams, InteractionState, init_cross_modal,
                          interact)
from .data import DatasetMeta, MultimodalExample
from .errors import ConfigError
from .nn import ParamStore, get_activation, linear
from .relevance import RelevanceParams, apply_view, init_relevance
from .semantic_vision import (SemanticVisionParams, VisionSequence, embed_objects,
                              init_semantic_vision, project_image, vit_encode)
from .spatial_graph import (RGCNParams, SpatialGraph, build_graph, init_rgcn,
                            rgcn_forward)
from .tensor import Tensor
from .text_encoder import (TextEncoderParams, TextEncoding, encode_text,
                           init_text_encoder)

STAGES = ("text", "vision_sem", "vision_spat", "relevance", "cross", "crf")


@dataclass
class PipelineState:
    """Every intermediate a forward pass produces, in stage order."""

    text: TextEncoding
    sem: VisionSequence
    graph: SpatialGraph
    spat: VisionSequence
    m1: Tensor
    m2: Tensor
    v1: Tensor
    v2: Tensor
    inter: InteractionState
    emissions: EmissionTable

    def first_nonfinite_stage(self) -> str | None:
        """Name of the first stage with a non-finite output, else None."""
        probes = (
            ("text", (self.text.cls, self.text.words)),
            ("vision_sem", (self.sem.img, self.sem.objects)),
            ("vision_spat", (self.spat.img, self.spat.objects)),
            ("relevance", (self.m1, self.m2, self.v1, self.v2)),
            ("cross", (self.inter.words, self.inter.v1, self.inter.v2)),
            ("crf", (self.emissions.scores,)),
        )
        for stage, tensors in probes:
            for t in tensors:
                if t.data.size and not np.isfinite(t.data).all():
                    return stage
        return None

    def relevance_magnitudes(self) -> tuple[float, float]:
        """Mean |M| per view; the relevance-magnitude diagnostic."""
        return (float(np.abs(self.m1.data).mean()), float(np.abs(self.m2.data).mean()))


class PipelineModel:
    """Owns all parameters and wires the stages together."""

    def __init__(self, config: PipelineConfig, meta: DatasetMeta):
        config.validate()
        meta.validate()
        if config.d != meta.d:
            raise ConfigError(f"config d={config.d} does not match dataset meta d={meta.d}")
        self.config = config
        self.meta = meta
        self.act = get_activation(config.activation)
        self.store = ParamStore(np.random.default_rng([config.seed, 0]))
        d = config.d
        self.text_params: TextEncoderParams = init_text_encoder(
            self.store, d, config.text_layers, positional=config.positional)
        self.vision_params: SemanticVisionParams = init_semantic_vision(
            self.store, d, meta.d_v, meta.concept_vocab, config.vit_layers)
        self.rgcn_params: RGCNParams = init_rgcn(self.store, d)
        self.rel1_params: RelevanceParams = init_relevance(
            self.store, d, view=1, mode=config.relevance_mode)
        self.rel2_params: RelevanceParams = init_relevance(
            self.store, d, view=2, mode=config.relevance_mode)
        self.cross_params: CrossModalParams = init_cross_modal(self.store, d)
        self.emit_w, self.emit_b, self.transitions = init_crf(self.store, d)
        self._forbidden = bio2_forbidden_mask() if config.constrained_decoding else None

    def forward(self, example: MultimodalExample, train: bool = False,
                rng: np.random.Generator | None = None) -> PipelineState:
        cfg = self.config
        drop = cfg.dropout if train else 0.0
        text = encode_text(example.sentence, self.text_params, cfg.heads, self.act,
                           drop, rng)

        v_img0 = project_image(example.image_feat, self.vision_params)
        obj0 = embed_objects(example.objects, self.vision_params)
        sem = vit_encode(VisionSequence(v_img0, obj0), self.vision_params,
                         cfg.heads, self.act, drop, rng)
        graph = build_graph(v_img0, obj0, [o.bbox for o in example.objects])
        spat = rgcn_forward(graph, self.rgcn_params, cfg.rgcn_layers, self.act)

        m1, v1 = apply_view(text.cls, sem, self.rel1_params)
        m2, v2 = apply_view(text.cls, spat, self.rel2_params)

        inter = interact(text.words, v1, v2, self.cross_params, cfg.heads,
                         cfg.interaction_rounds, self.act, cfg.bounded_gate,
                         drop, rng)
        emissions = EmissionTable(linear(inter.words, self.emit_w, self.emit_b))
        return PipelineState(text=text, sem=sem, graph=graph, spat=spat,
                             m1=m1, m2=m2, v1=v1, v2=v2, inter=inter,
                             emissions=emissions)

    def loss(self, example: MultimodalExample, train: bool = False,
             rng: np.random.Generator | None = None
             ) -> tuple[Tensor, PipelineState]:
        state = self.forward(example, train=train, rng=rng)
        return nll_loss(state.emissions, self.transitions,
                        example.sentence.labels), state

    def decode(self, example: MultimodalExample) -> tuple[list[int], PipelineState]:
        state = self.forward(example, train=False)
        return viterbi(state.emissions, self.transitions, self._forbidden), state
