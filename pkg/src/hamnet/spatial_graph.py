"""Spatial scene graph over detected objects plus a gated relational GCN.

Boxes are (x_center, y_center, height, width) in the unit square. Eleven
directed relation labels connect nodes: containment (inside/cover),
strong overlap, and eight 45-degree sector classes for disjoint-ish
boxes measured counter-clockwise from the positive x axis. A super node
(index 0, box covering the whole image) holds the global image state and
sends an Inside edge to every object, which is how it collects object
information during message passing; objects send nothing back to it.

Message passing is gated: each layer computes candidate states from
relation- and direction-specific linear maps of the neighbors, then blends
them into the running state through a sigmoid gate. One shared set of
relation weights serves every layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .errors import DataError, ShapeError
from .nn import Activation, ParamStore, linear
from .semantic_vision import VisionSequence
from .tensor import Tensor

Box = tuple[float, float, float, float]

SUPER_NODE_BOX: Box = (0.5, 0.5, 1.0, 1.0)
GEOM_DIMS = 4  # every node feature is prefixed by its box geometry
_DIAGONAL = math.sqrt(2.0)


class SpatialRelation(Enum):
    INSIDE = "inside"
    COVER = "cover"
    OVERLAP = "overlap"
    CLASS1 = "class1"
    CLASS2 = "class2"
    CLASS3 = "class3"
    CLASS4 = "class4"
    CLASS5 = "class5"
    CLASS6 = "class6"
    CLASS7 = "class7"
    CLASS8 = "class8"


RELATIONS: tuple[SpatialRelation, ...] = tuple(SpatialRelation)
DIRECTIONS: tuple[str, str] = ("in", "out")
_REL_ORDER = {rel: i for i, rel in enumerate(RELATIONS)}


def _extents(box: Box) -> tuple[float, float, float, float]:
    xc, yc, h, w = box
    return (xc - w / 2.0, yc - h / 2.0, xc + w / 2.0, yc + h / 2.0)


def _area(box: Box) -> float:
    return box[2] * box[3]


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes. Zero-area boxes are an error."""
    if _area(a) <= 0.0 or _area(b) <= 0.0:
        raise DataError(f"iou: zero-area box in pair {a}, {b}")
    ax1, ay1, ax2, ay2 = _extents(a)
    bx1, by1, bx2, by2 = _extents(b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (_area(a) + _area(b) - inter)


def _contains(a: Box, b: Box) -> bool:
    """Closed-box containment: a contains b, boundaries count."""
    ax1, ay1, ax2, ay2 = _extents(a)
    bx1, by1, bx2, by2 = _extents(b)
    return ax1 <= bx1 and ay1 <= by1 and ax2 >= bx2 and ay2 >= by2


def relate(a: Box, b: Box) -> SpatialRelation | None:
    """Relation label for the directed pair a -> b, or None for no edge.

    Priority: a fully containing b wins (Inside), then b fully containing
    a (Cover), then IoU > 0.5 (Overlap). Otherwise the center distance,
    normalized by the unit-square diagonal, must fall strictly below 0.5
    for an edge; its direction angle, counter-clockwise from the positive
    x axis, picks one of eight 45-degree sector classes where sector k
    spans [(k-1) * 45, k * 45) degrees.
    """
    if _area(a) <= 0.0 or _area(b) <= 0.0:
        raise DataError(f"relate: zero-area box in pair {a}, {b}")
    if _contains(a, b):
        return SpatialRelation.INSIDE
    if _contains(b, a):
        return SpatialRelation.COVER
    if iou(a, b) > 0.5:
        return SpatialRelation.OVERLAP
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    rho = math.hypot(dx, dy) / _DIAGONAL
    if rho >= 0.5:
        return None
    delta = math.atan2(dy, dx) % (2.0 * math.pi)
    k = min(int(delta / (math.pi / 4.0)), 7)
    return RELATIONS[3 + k]


# ---------------------------------------------------------------------------
# graph construction


@dataclass
class SpatialGraph:
    boxes: np.ndarray  # (N+1, 4), row 0 is the super node
    edges: list[tuple[int, int, SpatialRelation]]
    node_feats: Tensor  # (N+1, d + 4): [geometry | state]
    adjacency: dict[tuple[SpatialRelation, str], np.ndarray]

    @property
    def n_objects(self) -> int:
        return self.boxes.shape[0] - 1


def _adjacency(edges: list[tuple[int, int, SpatialRelation]],
               n_nodes: int) -> dict[tuple[SpatialRelation, str], np.ndarray]:
    groups: dict[tuple[SpatialRelation, str], np.ndarray] = {}

    def mat(key):
        if key not in groups:
            groups[key] = np.zeros((n_nodes, n_nodes))
        return groups[key]

    for src, dst, rel in edges:
        # an edge src -> dst delivers the source state to dst ("in") and,
        # through the reverse-direction weight, the target state to src ("out")
        mat((rel, "in"))[dst, src] += 1.0
        mat((rel, "out"))[src, dst] += 1.0
    return groups


def build_graph(img_state: Tensor, obj_states: Tensor,
                boxes: list[Box]) -> SpatialGraph:
    """Assemble the scene graph for one image.

    img_state is the (d,) global image state, obj_states the (N, d) object
    states, boxes the N object boxes. Node features are the box geometry
    concatenated with the state, so message passing sees positions.
    """
    n = len(boxes)
    if obj_states.data.shape[0] != n:
        raise ShapeError(f"build_graph: {obj_states.data.shape[0]} object states "
                         f"for {n} boxes")
    d = img_state.data.shape[0]
    all_boxes = np.asarray([SUPER_NODE_BOX] + [tuple(map(float, b)) for b in boxes])

    edges: list[tuple[int, int, SpatialRelation]] = []
    for i in range(1, n + 1):
        edges.append((0, i, SpatialRelation.INSIDE))
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if i == j:
                continue
            rel = relate(tuple(all_boxes[i]), tuple(all_boxes[j]))
            if rel is not None:
                edges.append((i, j, rel))
    edges.sort(key=lambda e: (e[0], e[1], _REL_ORDER[e[2]]))

    states = T.concat([T.reshape(img_state, (1, d)), obj_states], axis=0)
    node_feats = T.concat([T.constant(all_boxes), states], axis=1)
    return SpatialGraph(boxes=all_boxes, edges=edges, node_feats=node_feats,
                        adjacency=_adjacency(edges, n + 1))


# ---------------------------------------------------------------------------
# gated relational message passing


@dataclass
class RGCNParams:
    weights: dict[tuple[SpatialRelation, str], Tensor]  # 22 matrices, (D, D)
    bias: Tensor    # (D,) shared across relations
    gate_w: Tensor  # (2D, D)
    out_w: Tensor   # (D, d) final projection back to model width
    out_b: Tensor   # (d,)


def init_rgcn(store: ParamStore, d: int, prefix: str = "vision_spat") -> RGCNParams:
    big = d + GEOM_DIMS
    weights = {}
    for rel in RELATIONS:
        for direction in DIRECTIONS:
            weights[(rel, direction)] = store.normal(
                f"{prefix}.rgcn.{rel.value}_{direction}.w", (big, big), std=0.05
            )
    return RGCNParams(
        weights=weights,
        bias=store.zeros(f"{prefix}.rgcn.bias", (big,)),
        gate_w=store.normal(f"{prefix}.rgcn.gate.w", (2 * big, big), std=0.05),
        out_w=store.normal(f"{prefix}.out.w", (big, d)),
        out_b=store.zeros(f"{prefix}.out.b", (d,)),
    )


def rgcn_propagate(graph: SpatialGraph, params: RGCNParams, layers: int,
                   act: Activation) -> Tensor:
    """Run gated message passing and return node states, shape (N+1, D).

    Per layer: candidate v' = act(sum over incident edges of the relation-
    and direction-specific map of the neighbor state, plus bias); gate
    lambda = sigmoid(W_gate [v'; v]); update v <- v + lambda * v'. The
    group-summation order is fixed by relation then direction, so edge
    list order never affects the result.
    """
    if layers < 0:
        raise ShapeError(f"rgcn_propagate: negative layer count {layers}")
    v = graph.node_feats
    n_nodes, big = v.data.shape
    for _ in range(layers):
        msg = T.constant(np.zeros((n_nodes, big)))
        for rel in RELATIONS:
            for direction in DIRECTIONS:
                adj = graph.adjacency.get((rel, direction))
                if adj is None:
                    continue
                w = params.weights[(rel, direction)]
                msg = T.add(msg, T.matmul(T.constant(adj),
                                          T.matmul(v, T.transpose(w))))
        candidate = act(T.add_bias(msg, params.bias))
        gate = T.sigmoid(T.matmul(T.concat([candidate, v], axis=1), params.gate_w))
        v = T.add(v, T.mul(gate, candidate))
    return v


def rgcn_forward(graph: SpatialGraph, params: RGCNParams, layers: int,
                 act: Activation) -> VisionSequence:
    """Message passing plus the (D -> d) projection into model width."""
    states = rgcn_propagate(graph, params, layers, act)
    projected = linear(states, params.out_w, params.out_b)
    n = graph.n_objects
    return VisionSequence(img=T.take_row(projected, 0),
                          objects=T.slice_rows(projected, 1, n + 1))


# ---------------------------------------------------------------------------
# inspection helpers for the CLI


def graph_to_json(graph: SpatialGraph) -> dict:
    nodes = []
    for i, box in enumerate(graph.boxes):
        nodes.append({
            "index": i,
            "kind": "image" if i == 0 else "object",
            "bbox": [float(v) for v in box],
        })
    return {
        "nodes": nodes,
        "edges": [[src, dst, rel.value] for src, dst, rel in graph.edges],
    }


def graph_to_dot(graph: SpatialGraph) -> str:
    lines = ["digraph scene {"]
    for i in range(graph.boxes.shape[0]):
        label = "IMG" if i == 0 else f"obj{i}"
        lines.append(f'  n{i} [label="{label}"];')
    for src, dst, rel in graph.edges:
        lines.append(f'  n{src} -> n{dst} [label="{rel.value}"];')
    lines.append("}")
    return "\n".join(lines)
