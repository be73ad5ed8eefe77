"""Dynamic image-text relevance measuring.

Each vision view (semantic, spatial) owns an independent copy of these
parameters. A bilinear score C = tanh(h_cls^T W_TI v_img) measures how much
the image matters for this sentence; the relevance signal
M = tanh(W_T h_cls + C * W_I v_img) then modulates the global image state,
and every object is re-expressed from [M * v_img ; object] by a linear
fusion. tanh keeps every component of M in (-1, 1), so an irrelevant image
can be squashed toward zero instead of injecting noise.

M is a d-vector by default; a scalar variant (one shared gate value) is
kept for ablation via mode="scalar".
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import ParamStore
from .tensor import Tensor

RELEVANCE_MODES = ("vector", "scalar")


@dataclass
class RelevanceParams:
    mode: str
    w_ti: Tensor    # (d, d) bilinear form
    w_t: Tensor     # (d, d) for vector mode, (d,) for scalar mode
    w_i: Tensor     # same shape as w_t
    fuse_w: Tensor  # (2d, d)
    fuse_b: Tensor  # (d,)


def init_relevance(store: ParamStore, d: int, view: int, mode: str = "vector",
                   prefix: str = "relevance") -> RelevanceParams:
    if mode not in RELEVANCE_MODES:
        raise ConfigError(f"unknown relevance mode '{mode}'; choose from {RELEVANCE_MODES}")
    p = f"{prefix}.view{view}"
    gate_shape = (d, d) if mode == "vector" else (d,)
    return RelevanceParams(
        mode=mode,
        w_ti=store.normal(f"{p}.w_ti", (d, d)),
        w_t=store.normal(f"{p}.w_t", gate_shape),
        w_i=store.normal(f"{p}.w_i", gate_shape),
        fuse_w=store.normal(f"{p}.fuse.w", (2 * d, d)),
        fuse_b=store.zeros(f"{p}.fuse.b", (d,)),
    )


def relevance_score(h_cls: Tensor, v_img: Tensor, params: RelevanceParams) -> Tensor:
    """Relevance signal M; every component lies strictly inside (-1, 1).

    Returns a (d,) tensor in vector mode, a scalar tensor in scalar mode.
    """
    if h_cls.data.shape != v_img.data.shape or h_cls.data.ndim != 1:
        raise ShapeError(f"relevance_score: incompatible states {h_cls.data.shape} "
                         f"vs {v_img.data.shape}")
    c = T.tanh(T.matmul(T.matmul(h_cls, params.w_ti), v_img))
    if params.mode == "vector":
        gated = T.smul(c, T.matmul(params.w_i, v_img))
        return T.tanh(T.add(T.matmul(params.w_t, h_cls), gated))
    gated = T.mul(c, T.matmul(params.w_i, v_img))
    return T.tanh(T.add(T.matmul(params.w_t, h_cls), gated))


def fuse_local_global(m: Tensor, v_img: Tensor, objects: Tensor,
                      params: RelevanceParams) -> Tensor:
    """Relevance-conditioned object states: Linear([M * v_img ; obj_i]).

    objects is (N, d); the result has the same shape. N = 0 passes through
    as an empty (0, d) tensor.
    """
    if params.mode == "vector":
        if m.data.shape != v_img.data.shape:
            raise ShapeError(f"fuse_local_global: M shape {m.data.shape} != "
                             f"v_img shape {v_img.data.shape}")
        gated_img = T.mul(m, v_img)
    else:
        if m.data.shape != ():
            raise ShapeError("fuse_local_global: scalar mode needs a scalar M")
        gated_img = T.smul(m, v_img)
    n = objects.data.shape[0]
    pairs = T.concat([T.tile_rows(gated_img, n), objects], axis=1)
    return T.add_bias(T.matmul(pairs, params.fuse_w), params.fuse_b)


def apply_view(h_cls: Tensor, view: "object", params: RelevanceParams):
    """Convenience: score a VisionSequence view and fuse its objects.

    Returns (M, fused_objects).
    """
    m = relevance_score(h_cls, view.img, params)
    return m, fuse_local_global(m, view.img, view.objects, params)
