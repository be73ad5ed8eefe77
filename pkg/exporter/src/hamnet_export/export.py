"""Turn a raw annotated corpus into hamnet fixture files.

Raw corpus format: JSONL, one sentence per line.

    {"tokens": ["Alice", "lives", "in", "Berlin"],
     "tags":   ["B-PER", "O", "O", "B-LOC"],
     "image":  "images/0001.png",
     "split":  "train"}

``tags`` are BIO2 strings from the canonical label set; ``image`` is
resolved relative to the corpus file; ``split`` is optional and
defaults to train. The export writes train.jsonl, val.jsonl,
test.jsonl and meta.json into the output directory, plus an
export_record.json naming the encoder versions actually used. Files
are written atomically (temp file, then rename), and an unreadable
image degrades that one example to zero objects and a zero image
vector with a logged warning instead of failing the job.
"""

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .encoders import make_detector, make_image_backbone, make_text_encoder
from .errors import CorpusError, ExportError
from .manifest import ExportManifest

logger = logging.getLogger("hamnet_export")

# the fixture format contract: label order, token cap, objects kept per image
LABELS: tuple[str, ...] = (
    "O",
    "B-PER", "I-PER",
    "B-LOC", "I-LOC",
    "B-ORG", "I-ORG",
    "B-MISC", "I-MISC",
)
MAX_TOKENS = 128
MAX_OBJECTS = 15

_SPLITS = ("train", "val", "test")


@dataclass
class RawExample:
    tokens: list[str]
    labels: list[int]     # indices into LABELS
    image: Path
    split: str
    line: int


@dataclass
class ExportSummary:
    out_dir: Path
    counts: dict[str, int] = field(default_factory=dict)
    unreadable_images: int = 0


def load_corpus(path: Path) -> list[RawExample]:
    """Parse and validate the raw corpus, naming bad lines."""
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    label_index = {tag: i for i, tag in enumerate(LABELS)}
    rows = []
    with path.open() as fh:
        for lineno, text in enumerate(fh, start=1):
            text = text.strip()
            if not text:
                continue
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as e:
                raise CorpusError(f"invalid JSON: {e}", line=lineno)
            if not isinstance(raw, dict):
                raise CorpusError("each line must be a JSON object", line=lineno)
            for key in ("tokens", "tags", "image"):
                if key not in raw:
                    raise CorpusError(f"missing field '{key}'", line=lineno)
            tokens = raw["tokens"]
            if (not isinstance(tokens, list) or not tokens
                    or not all(isinstance(t, str) and t for t in tokens)):
                raise CorpusError("tokens must be a non-empty list of non-empty strings",
                                  line=lineno)
            if len(tokens) > MAX_TOKENS:
                raise CorpusError(f"sentence has {len(tokens)} tokens, "
                                  f"limit is {MAX_TOKENS}", line=lineno)
            tags = raw["tags"]
            if not isinstance(tags, list) or len(tags) != len(tokens):
                raise CorpusError(f"tags length != tokens length", line=lineno)
            labels = []
            for tag in tags:
                if tag not in label_index:
                    raise CorpusError(f"unknown tag {tag!r} (expected one of "
                                      f"{list(LABELS)})", line=lineno)
                labels.append(label_index[tag])
            split = raw.get("split", "train")
            if split not in _SPLITS:
                raise CorpusError(f"split must be one of {list(_SPLITS)}, "
                                  f"got {split!r}", line=lineno)
            rows.append(RawExample(
                tokens=[str(t) for t in tokens],
                labels=labels,
                image=(path.parent / str(raw["image"])).resolve(),
                split=split,
                line=lineno,
            ))
    if not any(r.split == "train" for r in rows):
        raise CorpusError("corpus has no train examples")
    return rows


def unit_box(box: tuple[float, float, float, float],
             size: tuple[int, int]) -> tuple[float, float, float, float] | None:
    """Pixel corner box to unit-square (xc, yc, h, w); None if degenerate.

    Corners are clipped to the image first so detector overshoot never
    produces out-of-range fixtures.
    """
    w_img, h_img = size
    x1 = min(max(box[0], 0.0), w_img)
    y1 = min(max(box[1], 0.0), h_img)
    x2 = min(max(box[2], 0.0), w_img)
    y2 = min(max(box[3], 0.0), h_img)
    if x2 <= x1 or y2 <= y1:
        return None
    return ((x1 + x2) / 2.0 / w_img, (y1 + y2) / 2.0 / h_img,
            (y2 - y1) / h_img, (x2 - x1) / w_img)


def _crop(image: Image.Image, box: tuple[float, float, float, float]) -> Image.Image:
    w_img, h_img = image.size
    x1 = max(0, math.floor(box[0]))
    y1 = max(0, math.floor(box[1]))
    x2 = min(w_img, math.ceil(box[2]))
    y2 = min(h_img, math.ceil(box[3]))
    return image.crop((x1, y1, x2, y2))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _encode_example(row: RawExample, text_encoder, backbone, detector,
                    manifest: ExportManifest, summary: ExportSummary) -> dict:
    word_feats, cls_feat = text_encoder.encode(row.tokens)
    word_feats = np.asarray(word_feats, dtype=np.float64)
    cls_feat = np.asarray(cls_feat, dtype=np.float64)
    if word_feats.shape != (len(row.tokens), manifest.d) or cls_feat.shape != (manifest.d,):
        raise ExportError(f"text encoder emitted shapes {word_feats.shape}/"
                          f"{cls_feat.shape}, expected ({len(row.tokens)}, "
                          f"{manifest.d})/({manifest.d},)")

    objects = []
    try:
        with Image.open(row.image) as img:
            img.load()
            image_feat = np.asarray(backbone.encode(img), dtype=np.float64)
            candidates = sorted(detector.detect(img), key=lambda c: -c.score)
            for cand in candidates:
                bbox = unit_box(cand.box, img.size)
                if bbox is None:
                    continue
                if not (0 <= cand.concept_id < manifest.concept_vocab):
                    raise ExportError(f"detector produced concept id "
                                      f"{cand.concept_id} outside "
                                      f"[0, {manifest.concept_vocab})")
                feat = np.asarray(backbone.encode(_crop(img, cand.box)),
                                  dtype=np.float64)
                objects.append({
                    "bbox": list(bbox),
                    "feat": feat.tolist(),
                    "concept_id": cand.concept_id,
                    "score": min(max(cand.score, 0.0), 1.0),
                })
                if len(objects) == MAX_OBJECTS:
                    break
    except (FileNotFoundError, OSError) as e:
        logger.warning("line %d: cannot read image %s (%s); exporting with "
                       "no objects", row.line, row.image, e)
        summary.unreadable_images += 1
        image_feat = np.zeros(manifest.d_v)
        objects = []

    if image_feat.shape != (manifest.d_v,):
        raise ExportError(f"image backbone emitted shape {image_feat.shape}, "
                          f"expected ({manifest.d_v},)")
    return {
        "tokens": row.tokens,
        "labels": row.labels,
        "word_feats": word_feats.tolist(),
        "cls_feat": cls_feat.tolist(),
        "image_feat": image_feat.tolist(),
        "objects": objects,
    }


def export(manifest: ExportManifest) -> ExportSummary:
    """Run the whole job and return what was written where."""
    text_encoder = make_text_encoder(manifest.text_encoder, manifest.d)
    backbone = make_image_backbone(manifest.image_backbone, manifest.d_v)
    detector = make_detector(manifest.detector)
    if len(detector.classes) != manifest.concept_vocab:
        raise ExportError(f"detector '{manifest.detector}' has "
                          f"{len(detector.classes)} classes but the manifest "
                          f"declares concept_vocab={manifest.concept_vocab}")

    rows = load_corpus(manifest.corpus)
    summary = ExportSummary(out_dir=manifest.out_dir)
    encoded: dict[str, list[str]] = {split: [] for split in _SPLITS}
    for row in rows:
        record = _encode_example(row, text_encoder, backbone, detector,
                                 manifest, summary)
        encoded[row.split].append(json.dumps(record))

    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    for split in _SPLITS:
        lines = encoded[split]
        _atomic_write(manifest.out_dir / f"{split}.jsonl",
                      "".join(line + "\n" for line in lines))
        summary.counts[split] = len(lines)
    meta = {"d": manifest.d, "d_v": manifest.d_v,
            "concept_vocab": manifest.concept_vocab, "label_set": list(LABELS)}
    _atomic_write(manifest.out_dir / "meta.json", json.dumps(meta, indent=2) + "\n")
    record = {
        "corpus_sha256": hashlib.sha256(manifest.corpus.read_bytes()).hexdigest(),
        "encoders": {
            "text_encoder": {"id": manifest.text_encoder, "version": text_encoder.version},
            "image_backbone": {"id": manifest.image_backbone, "version": backbone.version},
            "detector": {"id": manifest.detector, "version": detector.version,
                         "classes": list(detector.classes)},
        },
        "examples": summary.counts,
        "unreadable_images": summary.unreadable_images,
    }
    _atomic_write(manifest.out_dir / "export_record.json",
                  json.dumps(record, indent=2) + "\n")
    return summary
