"""Linear-chain CRF over BIO2 label sequences.

The score of a path y for emissions E is

    start[y_1] + sum_t E[t, y_t] + sum_t trans[y_t, y_{t+1}] + stop[y_M]

with learned start/stop vectors (treated as zero when absent). All dynamic
programs run in log space with logsumexp, never raw products, so the
negative log-likelihood  logZ - score(gold)  stays finite and non-negative.
Viterbi breaks exact ties toward the smaller label index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import LABELS, N_LABELS, entity_type_of, is_begin
from .errors import ShapeError
from .nn import ParamStore
from .tensor import Tensor


@dataclass
class EmissionTable:
    scores: Tensor  # (M, K) per-token label scores


@dataclass
class TransitionTable:
    scores: Tensor          # (K, K), entry [i, j] scores the move i -> j
    start: Tensor | None = None  # (K,) score of starting in each label
    stop: Tensor | None = None   # (K,) score of ending in each label

    @property
    def n_labels(self) -> int:
        return self.scores.data.shape[0]


def init_crf(store: ParamStore, d: int, n_labels: int = N_LABELS,
             prefix: str = "crf") -> tuple[Tensor, Tensor, TransitionTable]:
    """Emission head weights (d, K), bias (K,), and the transition table."""
    emit_w = store.normal(f"{prefix}.emit.w", (d, n_labels))
    emit_b = store.zeros(f"{prefix}.emit.b", (n_labels,))
    table = TransitionTable(
        scores=store.normal(f"{prefix}.trans", (n_labels, n_labels), std=0.05),
        start=store.normal(f"{prefix}.start", (n_labels,), std=0.05),
        stop=store.normal(f"{prefix}.stop", (n_labels,), std=0.05),
    )
    return emit_w, emit_b, table


def _check(emissions: EmissionTable, transitions: TransitionTable) -> tuple[int, int]:
    m, k = emissions.scores.data.shape
    if m == 0:
        raise ShapeError("CRF: empty sequence")
    if transitions.scores.data.shape != (k, k):
        raise ShapeError(f"CRF: transition shape {transitions.scores.data.shape} "
                         f"!= ({k}, {k})")
    for name, vec in (("start", transitions.start), ("stop", transitions.stop)):
        if vec is not None and vec.data.shape != (k,):
            raise ShapeError(f"CRF: {name} shape {vec.data.shape} != ({k},)")
    return m, k


def _boundary(vec: Tensor | None, k: int) -> Tensor:
    return vec if vec is not None else T.constant(np.zeros(k))


def log_partition(emissions: EmissionTable, transitions: TransitionTable) -> Tensor:
    """log Z by the forward algorithm, differentiable, scalar output."""
    m, k = _check(emissions, transitions)
    alpha = T.add(T.take_row(emissions.scores, 0), _boundary(transitions.start, k))
    for t in range(1, m):
        # mat[i, j] = alpha[i] + trans[i, j]; reduce over the source label i
        mat = T.add(T.tile_cols(alpha, k), transitions.scores)
        alpha = T.add(T.logsumexp(mat, axis=0), T.take_row(emissions.scores, t))
    return T.logsumexp(T.add(alpha, _boundary(transitions.stop, k)))


def path_score(emissions: EmissionTable, transitions: TransitionTable,
               labels: list[int]) -> Tensor:
    """Differentiable score of one label path."""
    m, k = _check(emissions, transitions)
    if len(labels) != m:
        raise ShapeError(f"CRF: path length {len(labels)} != sequence length {m}")
    labs = np.asarray(labels, dtype=np.int64)
    if labs.size and (labs.min() < 0 or labs.max() >= k):
        raise ShapeError(f"CRF: label index outside [0, {k})")

    emit_mask = np.zeros((m, k))
    emit_mask[np.arange(m), labs] = 1.0
    score = T.sum_all(T.mul(emissions.scores, T.constant(emit_mask)))
    if m > 1:
        trans_count = np.zeros((k, k))
        np.add.at(trans_count, (labs[:-1], labs[1:]), 1.0)
        score = T.add(score, T.sum_all(T.mul(transitions.scores,
                                             T.constant(trans_count))))
    for vec, pos in ((transitions.start, labs[0]), (transitions.stop, labs[-1])):
        if vec is not None:
            pick = np.zeros(k)
            pick[pos] = 1.0
            score = T.add(score, T.sum_all(T.mul(vec, T.constant(pick))))
    return score


def nll_loss(emissions: EmissionTable, transitions: TransitionTable,
             labels: list[int]) -> Tensor:
    """Negative log-likelihood of the gold path; non-negative by construction."""
    return T.sub(log_partition(emissions, transitions),
                 path_score(emissions, transitions, labels))


def viterbi(emissions: EmissionTable, transitions: TransitionTable,
            forbidden: np.ndarray | None = None) -> list[int]:
    """Most probable label path (plain numpy, not differentiated).

    ``forbidden`` is an optional boolean (K, K) mask of transitions to
    exclude during decoding only. Exact score ties resolve toward the
    smaller label index because argmax scans indices in order.
    """
    m, k = _check(emissions, transitions)
    em = emissions.scores.data
    tr = transitions.scores.data.copy()
    if forbidden is not None:
        if forbidden.shape != (k, k):
            raise ShapeError(f"CRF: forbidden mask shape {forbidden.shape} != ({k}, {k})")
        tr[forbidden] = -np.inf
    start = transitions.start.data if transitions.start is not None else np.zeros(k)
    stop = transitions.stop.data if transitions.stop is not None else np.zeros(k)

    score = em[0] + start
    back = np.zeros((m, k), dtype=np.int64)
    for t in range(1, m):
        total = score[:, None] + tr  # [i, j] = best-so-far(i) + trans(i -> j)
        back[t] = total.argmax(axis=0)
        score = total[back[t], np.arange(k)] + em[t]
    score = score + stop
    path = [int(score.argmax())]
    for t in range(m - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return path


def bio2_forbidden_mask(labels: tuple[str, ...] = LABELS) -> np.ndarray:
    """Transitions that violate BIO2: I-X may only follow B-X or I-X."""
    k = len(labels)
    mask = np.zeros((k, k), dtype=bool)
    for j in range(k):
        tj = entity_type_of(j)
        if tj is None or is_begin(j):
            continue
        for i in range(k):
            if entity_type_of(i) != tj:
                mask[i, j] = True
    return mask
