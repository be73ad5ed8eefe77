"""Dataset schema, BIO2 label handling, entity metrics, synthetic fixtures.

Fixture files are JSONL, one example per line:

    {"tokens": [...], "labels": [int ...], "word_feats": [[...] ...],
     "cls_feat": [...], "image_feat": [...],
     "objects": [{"bbox": [xc, yc, h, w], "feat": [...],
                  "concept_id": int, "score": float}, ...]}

A sibling ``meta.json`` declares feature dimensions and the label set:
``{"d": ..., "d_v": ..., "concept_vocab": ..., "label_set": [...]}``.

Boxes are (x_center, y_center, height, width), normalized to the unit
square; note height precedes width. Ingestion normalizes: stray I-X tags
are repaired to B-X, boxes are clipped to the unit square, and object
lists are sorted by score descending and truncated to the top 15.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

LABELS: tuple[str, ...] = (
    "O",
    "B-PER", "I-PER",
    "B-LOC", "I-LOC",
    "B-ORG", "I-ORG",
    "B-MISC", "I-MISC",
)
ENTITY_TYPES: tuple[str, ...] = ("PER", "LOC", "ORG", "MISC")
N_LABELS = len(LABELS)
O_INDEX = 0

MAX_TOKENS = 128
MAX_OBJECTS = 15


def label_index(tag: str) -> int:
    try:
        return LABELS.index(tag)
    except ValueError:
        raise DataError(f"unknown BIO2 tag '{tag}'")


def entity_type_of(index: int) -> str | None:
    """Entity type of a label index, or None for O."""
    if index == O_INDEX:
        return None
    return ENTITY_TYPES[(index - 1) // 2]


def is_begin(index: int) -> bool:
    return index != O_INDEX and index % 2 == 1


# ---------------------------------------------------------------------------
# schema types


@dataclass
class DatasetMeta:
    d: int
    d_v: int
    concept_vocab: int
    label_set: tuple[str, ...] = LABELS

    def validate(self) -> None:
        if self.d <= 0 or self.d_v <= 0 or self.concept_vocab <= 0:
            raise DataError("meta dimensions must be positive")
        if tuple(self.label_set) != LABELS:
            raise DataError(f"meta label_set does not match the canonical BIO2 set {list(LABELS)}")

    def to_dict(self) -> dict:
        return {"d": self.d, "d_v": self.d_v, "concept_vocab": self.concept_vocab,
                "label_set": list(self.label_set)}

    @staticmethod
    def from_dict(raw: dict) -> "DatasetMeta":
        for key in ("d", "d_v", "concept_vocab", "label_set"):
            if key not in raw:
                raise DataError(f"meta file is missing '{key}'")
        meta = DatasetMeta(d=int(raw["d"]), d_v=int(raw["d_v"]),
                           concept_vocab=int(raw["concept_vocab"]),
                           label_set=tuple(raw["label_set"]))
        meta.validate()
        return meta


@dataclass
class ObjectDetection:
    bbox: tuple[float, float, float, float]  # (x_center, y_center, height, width)
    feat: np.ndarray                         # (d_v,)
    concept_id: int
    score: float


@dataclass
class TaggedSentence:
    tokens: list[str]
    labels: list[int]
    word_feats: np.ndarray  # (M, d)
    cls_feat: np.ndarray    # (d,)


@dataclass
class MultimodalExample:
    sentence: TaggedSentence
    image_feat: np.ndarray  # (d_v,)
    objects: list[ObjectDetection] = field(default_factory=list)


# ---------------------------------------------------------------------------
# BIO2 handling


def repair_bio2(labels: list[int]) -> list[int]:
    """Repair stray I-X tags in place of rejecting them.

    An I-X not preceded by B-X or I-X of the same type becomes B-X.
    """
    fixed = list(labels)
    prev_type: str | None = None
    for i, lab in enumerate(fixed):
        typ = entity_type_of(lab)
        if typ is not None and not is_begin(lab) and typ != prev_type:
            fixed[i] = lab - 1  # I-X -> B-X sits one index lower
        prev_type = typ
    return fixed


@dataclass(frozen=True)
class EntitySpan:
    start: int  # first token index
    stop: int   # one past the last token index
    type: str


def spans_from_bio2(labels: list[int]) -> list[EntitySpan]:
    """Decode a BIO2 tag sequence into entity spans (repairing strays first)."""
    labs = repair_bio2(labels)
    spans: list[EntitySpan] = []
    i = 0
    while i < len(labs):
        if is_begin(labs[i]):
            typ = entity_type_of(labs[i])
            j = i + 1
            inside = labs[i] + 1
            while j < len(labs) and labs[j] == inside:
                j += 1
            spans.append(EntitySpan(i, j, typ))
            i = j
        else:
            i += 1
    return spans


def bio2_from_spans(spans: list[EntitySpan], length: int) -> list[int]:
    labels = [O_INDEX] * length
    for span in spans:
        if not (0 <= span.start < span.stop <= length):
            raise DataError(f"span [{span.start}, {span.stop}) out of range for {length} tokens")
        base = 1 + 2 * ENTITY_TYPES.index(span.type)
        labels[span.start] = base
        for k in range(span.start + 1, span.stop):
            labels[k] = base + 1
    return labels


# ---------------------------------------------------------------------------
# metrics


@dataclass
class TypeScore:
    precision: float
    recall: float
    f1: float
    n_gold: int
    n_pred: int


@dataclass
class F1Report:
    precision: float
    recall: float
    f1: float
    per_type: dict[str, TypeScore]


def _prf(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if (p + r) else 0.0
    return p, r, f


def entity_f1(pred: list[list[EntitySpan]], gold: list[list[EntitySpan]]) -> F1Report:
    """Micro-averaged exact-match entity precision/recall/F1, plus per-type scores.

    A predicted span counts as correct only when (start, stop, type) all
    match a gold span of the same sentence. Zero denominators score 0.
    """
    if len(pred) != len(gold):
        raise DataError(f"prediction/gold sentence counts differ: {len(pred)} vs {len(gold)}")
    tp_total = n_pred_total = n_gold_total = 0
    by_type = {t: [0, 0, 0] for t in ENTITY_TYPES}  # tp, n_pred, n_gold
    for p_spans, g_spans in zip(pred, gold):
        gset = set(g_spans)
        for s in p_spans:
            by_type[s.type][1] += 1
            if s in gset:
                by_type[s.type][0] += 1
        for s in g_spans:
            by_type[s.type][2] += 1
        tp_total += len(set(p_spans) & gset)
        n_pred_total += len(p_spans)
        n_gold_total += len(g_spans)
    p, r, f = _prf(tp_total, n_pred_total, n_gold_total)
    per_type = {}
    for t, (tp, npred, ngold) in by_type.items():
        tp_, tr_, tf_ = _prf(tp, npred, ngold)
        per_type[t] = TypeScore(tp_, tr_, tf_, ngold, npred)
    return F1Report(p, r, f, per_type)


# ---------------------------------------------------------------------------
# (de)serialization


def load_meta(path: str | Path) -> DatasetMeta:
    path = Path(path)
    if not path.exists():
        raise DataError(f"meta file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"meta file {path} is not valid JSON: {e}")
    return DatasetMeta.from_dict(raw)


def _require(cond: bool, message: str, line: int, fld: str | None = None) -> None:
    if not cond:
        raise DataError(message, line=line, field=fld)


def _clamp_bbox(raw, line: int) -> tuple[float, float, float, float]:
    _require(isinstance(raw, (list, tuple)) and len(raw) == 4,
             "bbox must be [x_center, y_center, height, width]", line, "bbox")
    xc, yc, h, w = (float(v) for v in raw)
    _require(np.isfinite([xc, yc, h, w]).all(), "bbox values must be finite", line, "bbox")
    _require(h > 0 and w > 0, "bbox height and width must be positive", line, "bbox")
    x1 = np.clip(xc - w / 2, 0.0, 1.0)
    x2 = np.clip(xc + w / 2, 0.0, 1.0)
    y1 = np.clip(yc - h / 2, 0.0, 1.0)
    y2 = np.clip(yc + h / 2, 0.0, 1.0)
    _require(x2 > x1 and y2 > y1, "bbox clips to zero area inside the unit square",
             line, "bbox")
    return (float((x1 + x2) / 2), float((y1 + y2) / 2), float(y2 - y1), float(x2 - x1))


def _float_vector(raw, dim: int, line: int, fld: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    _require(arr.shape == (dim,), f"expected {dim} floats, got shape {arr.shape}", line, fld)
    _require(np.isfinite(arr).all(), "values must be finite", line, fld)
    return arr


def _parse_example(raw: dict, meta: DatasetMeta, line: int) -> MultimodalExample:
    for key in ("tokens", "labels", "word_feats", "cls_feat", "image_feat", "objects"):
        _require(key in raw, f"missing field '{key}'", line, key)
    tokens = raw["tokens"]
    _require(isinstance(tokens, list) and len(tokens) >= 1, "tokens must be a non-empty list",
             line, "tokens")
    m = len(tokens)
    _require(m <= MAX_TOKENS, f"sentence has {m} tokens, limit is {MAX_TOKENS}", line, "tokens")
    labels = raw["labels"]
    _require(isinstance(labels, list) and len(labels) == m,
             f"labels length {len(labels)} != tokens length {m}", line, "labels")
    for lab in labels:
        _require(isinstance(lab, int) and 0 <= lab < N_LABELS,
                 f"label index {lab!r} outside [0, {N_LABELS})", line, "labels")
    labels = repair_bio2(labels)

    feats = np.asarray(raw["word_feats"], dtype=np.float64)
    _require(feats.shape == (m, meta.d),
             f"word_feats shape {feats.shape} != ({m}, {meta.d})", line, "word_feats")
    _require(np.isfinite(feats).all(), "values must be finite", line, "word_feats")
    cls_feat = _float_vector(raw["cls_feat"], meta.d, line, "cls_feat")
    image_feat = _float_vector(raw["image_feat"], meta.d_v, line, "image_feat")

    _require(isinstance(raw["objects"], list), "objects must be a list", line, "objects")
    objects = []
    for i, obj in enumerate(raw["objects"]):
        _require(isinstance(obj, dict), f"object {i} must be an object record", line, "objects")
        for key in ("bbox", "feat", "concept_id", "score"):
            _require(key in obj, f"object {i} missing '{key}'", line, "objects")
        cid = obj["concept_id"]
        _require(isinstance(cid, int) and 0 <= cid < meta.concept_vocab,
                 f"object {i} concept_id {cid!r} outside [0, {meta.concept_vocab})",
                 line, "objects")
        score = float(obj["score"])
        _require(np.isfinite(score) and 0.0 <= score <= 1.0,
                 f"object {i} score {score} outside [0, 1]", line, "objects")
        objects.append(ObjectDetection(
            bbox=_clamp_bbox(obj["bbox"], line),
            feat=_float_vector(obj["feat"], meta.d_v, line, "objects"),
            concept_id=cid,
            score=score,
        ))
    # Stable sort keeps input order among ties; keep the strongest 15.
    objects.sort(key=lambda o: -o.score)
    objects = objects[:MAX_OBJECTS]

    return MultimodalExample(
        sentence=TaggedSentence(list(tokens), labels, feats, cls_feat),
        image_feat=image_feat,
        objects=objects,
    )


def load_dataset(path: str | Path, meta: DatasetMeta) -> list[MultimodalExample]:
    """Load and validate a JSONL fixture file against its meta declaration."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    examples = []
    with path.open() as fh:
        for lineno, text in enumerate(fh, start=1):
            text = text.strip()
            if not text:
                continue
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as e:
                raise DataError(f"invalid JSON: {e}", line=lineno)
            if not isinstance(raw, dict):
                raise DataError("each line must be a JSON object", line=lineno)
            examples.append(_parse_example(raw, meta, lineno))
    return examples


def example_to_dict(ex: MultimodalExample) -> dict:
    return {
        "tokens": list(ex.sentence.tokens),
        "labels": list(ex.sentence.labels),
        "word_feats": ex.sentence.word_feats.tolist(),
        "cls_feat": ex.sentence.cls_feat.tolist(),
        "image_feat": ex.image_feat.tolist(),
        "objects": [
            {"bbox": list(o.bbox), "feat": o.feat.tolist(),
             "concept_id": o.concept_id, "score": o.score}
            for o in ex.objects
        ],
    }


def save_dataset(path: str | Path, examples: list[MultimodalExample]) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_dict(ex)) + "\n")


def save_meta(path: str | Path, meta: DatasetMeta) -> None:
    Path(path).write_text(json.dumps(meta.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# synthetic fixtures


@dataclass
class SyntheticConfig:
    seed: int = 7
    n_train: int = 32
    n_val: int = 16
    n_test: int = 16
    m_range: tuple[int, int] = (6, 12)    # tokens per sentence
    n_range: tuple[int, int] = (2, 5)     # objects per image
    d: int = 32
    d_v: int = 24
    concept_vocab: int = 32
    relevance_rate: float = 1.0
    entity_density: float = 0.3

    def validate(self) -> None:
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train == 0:
            raise ConfigError("split sizes must be non-negative and train non-empty")
        for name, (lo, hi) in (("m_range", self.m_range), ("n_range", self.n_range)):
            if lo > hi or (name == "m_range" and lo < 1) or (name == "n_range" and lo < 0):
                raise ConfigError(f"{name} ({lo}, {hi}) is not a valid range")
        if self.m_range[1] > MAX_TOKENS:
            raise ConfigError(f"m_range exceeds the {MAX_TOKENS}-token limit")
        if min(self.d, self.d_v, self.concept_vocab) <= 0:
            raise ConfigError("feature dimensions must be positive")
        if not (0.0 <= self.relevance_rate <= 1.0):
            raise ConfigError("relevance_rate must sit in [0, 1]")
        if not (0.0 < self.entity_density < 1.0):
            raise ConfigError("entity_density must sit in (0, 1)")


_FILLERS = ("the", "a", "of", "in", "at", "on", "with", "near", "today", "while",
            "old", "new", "big", "small", "good")


@dataclass
class GenerationSummary:
    counts: dict[str, int]
    relevant: dict[str, list[bool]]
    entity_token_fraction: float


class _Prototypes:
    """Planted signal directions, drawn once from the generator seed.

    Word features identify entity boundaries and the type *pair* (PER/LOC
    versus ORG/MISC) but read identically for both types inside a pair; the
    image scene and object concepts carry the exact type. A model that
    learns to consult relevant images can therefore beat one that reads the
    text alone, while irrelevant (noise) images leave the text ceiling.
    """

    def __init__(self, rng: np.random.Generator, cfg: SyntheticConfig):
        # prototype rows: O, then (begin, inside) per type group
        self.word = rng.normal(0.0, 1.0, (1 + 2 * 2, cfg.d))
        self.concept = rng.normal(0.0, 1.0, (cfg.concept_vocab, cfg.d_v))
        self.scene = rng.normal(0.0, 1.0, (len(ENTITY_TYPES), cfg.d_v))
        # concept ids are partitioned into one block per entity type plus background
        self.block = max(1, cfg.concept_vocab // (len(ENTITY_TYPES) + 1))

    @staticmethod
    def word_proto_index(label: int) -> int:
        if label == O_INDEX:
            return 0
        group = ((label - 1) // 2) // 2
        inside = (label - 1) % 2
        return 1 + 2 * group + inside

    def concepts_for_type(self, t: int) -> tuple[int, int]:
        lo = t * self.block
        hi = min(lo + self.block, self.concept.shape[0])
        return lo, max(hi, lo + 1)


def _gen_sentence(rng: np.random.Generator, feat_rng: np.random.Generator,
                  protos: _Prototypes, cfg: SyntheticConfig) -> TaggedSentence:
    m = int(rng.integers(cfg.m_range[0], cfg.m_range[1] + 1))
    # Entity-start probability solving the renewal-share equation for the
    # target token density with mean entity length 1.5.
    f = cfg.entity_density
    p_start = f / (1.5 - 0.5 * f)
    labels: list[int] = []
    tokens: list[str] = []
    while len(labels) < m:
        if rng.random() < p_start:
            t = int(rng.integers(len(ENTITY_TYPES)))
            length = min(int(rng.integers(1, 3)), m - len(labels))
            base = 1 + 2 * t
            labels.extend([base] + [base + 1] * (length - 1))
            # token strings name the type group only, mirroring the features
            tokens.extend(f"g{t // 2}e{int(rng.integers(10))}" for _ in range(length))
        else:
            labels.append(O_INDEX)
            tokens.append(_FILLERS[int(rng.integers(len(_FILLERS)))])
    rows = [protos.word_proto_index(lab) for lab in labels]
    word_feats = protos.word[rows] + 0.3 * feat_rng.normal(0.0, 1.0, (m, cfg.d))
    cls_feat = word_feats.mean(axis=0) + 0.1 * feat_rng.normal(0.0, 1.0, cfg.d)
    return TaggedSentence(tokens, labels, word_feats, cls_feat)


def _gen_visuals(rng: np.random.Generator, protos: _Prototypes, cfg: SyntheticConfig,
                 sentence: TaggedSentence, relevant: bool
                 ) -> tuple[np.ndarray, list[ObjectDetection]]:
    n = int(rng.integers(cfg.n_range[0], cfg.n_range[1] + 1))
    types_present = sorted({(lab - 1) // 2 for lab in sentence.labels if lab != O_INDEX})
    if relevant and types_present:
        image_feat = protos.scene[types_present].mean(axis=0) \
            + 0.1 * rng.normal(0.0, 1.0, cfg.d_v)
    else:
        image_feat = rng.normal(0.0, 1.0, cfg.d_v)
    scores = np.sort(rng.uniform(0.05, 1.0, n))[::-1]
    objects = []
    for i in range(n):
        if relevant and types_present:
            t = types_present[int(rng.integers(len(types_present)))]
            lo, hi = protos.concepts_for_type(t)
            cid = int(rng.integers(lo, hi))
            feat = protos.concept[cid] + 0.15 * rng.normal(0.0, 1.0, cfg.d_v)
        else:
            cid = int(rng.integers(cfg.concept_vocab))
            feat = rng.normal(0.0, 1.0, cfg.d_v)
        xc, yc = rng.uniform(0.15, 0.85, 2)
        h, w = rng.uniform(0.1, 0.5, 2)
        x1, x2 = np.clip(xc - w / 2, 0, 1), np.clip(xc + w / 2, 0, 1)
        y1, y2 = np.clip(yc - h / 2, 0, 1), np.clip(yc + h / 2, 0, 1)
        bbox = (float((x1 + x2) / 2), float((y1 + y2) / 2), float(y2 - y1), float(x2 - x1))
        objects.append(ObjectDetection(bbox, feat, cid, float(scores[i])))
    return image_feat, objects


def gen_synthetic(cfg: SyntheticConfig, out_dir: str | Path) -> GenerationSummary:
    """Write train/val/test JSONL fixtures plus meta.json under ``out_dir``.

    Word features pin entity boundaries and the type pair; the exact type
    inside a pair is only recoverable from the image (scene feature and
    object concepts), and only on examples where the relevance coin lands
    relevant. Fully deterministic for a fixed config: structure, features,
    and the relevance coin stream each use their own child rng so the same
    seed yields the same sentences whether or not images carry signal.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    proto_rng = np.random.default_rng([cfg.seed, 0])
    struct_rng = np.random.default_rng([cfg.seed, 1])
    feat_rng = np.random.default_rng([cfg.seed, 2])
    vis_rng = np.random.default_rng([cfg.seed, 3])
    flag_rng = np.random.default_rng([cfg.seed, 4])
    protos = _Prototypes(proto_rng, cfg)

    counts = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    relevant_flags: dict[str, list[bool]] = {}
    entity_tokens = total_tokens = 0
    for split, count in counts.items():
        examples = []
        flags = []
        for _ in range(count):
            sent = _gen_sentence(struct_rng, feat_rng, protos, cfg)
            relevant = bool(flag_rng.random() < cfg.relevance_rate)
            image_feat, objects = _gen_visuals(vis_rng, protos, cfg, sent, relevant)
            examples.append(MultimodalExample(sent, image_feat, objects))
            flags.append(relevant)
            entity_tokens += sum(1 for lab in sent.labels if lab != O_INDEX)
            total_tokens += len(sent.labels)
        save_dataset(out_dir / f"{split}.jsonl", examples)
        relevant_flags[split] = flags
    meta = DatasetMeta(d=cfg.d, d_v=cfg.d_v, concept_vocab=cfg.concept_vocab)
    save_meta(out_dir / "meta.json", meta)
    return GenerationSummary(counts, relevant_flags,
                             entity_tokens / total_tokens if total_tokens else 0.0)
