"""Export manifest: one JSON file describing a whole export job."""

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ExportError

_REQUIRED = ("corpus", "out_dir", "text_encoder", "image_backbone",
             "detector", "d", "d_v", "concept_vocab")


@dataclass
class ExportManifest:
    corpus: Path          # raw corpus JSONL
    out_dir: Path         # where the fixture files land
    text_encoder: str     # registry id
    image_backbone: str   # registry id
    detector: str         # registry id
    d: int                # text feature width the encoder must emit
    d_v: int              # vision feature width backbone and regions must emit
    concept_vocab: int    # must equal the detector's class count

    def validate(self) -> None:
        if min(self.d, self.d_v, self.concept_vocab) <= 0:
            raise ExportError("d, d_v and concept_vocab must be positive")


def load_manifest(path: str | Path) -> ExportManifest:
    """Read and validate a manifest file.

    Relative corpus/out_dir paths are resolved against the manifest's own
    directory, so a manifest can travel with its corpus.
    """
    path = Path(path)
    if not path.exists():
        raise ExportError(f"manifest file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ExportError(f"manifest {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ExportError("manifest must be a JSON object")
    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise ExportError(f"manifest is missing {missing}")
    unknown = [k for k in raw if k not in _REQUIRED]
    if unknown:
        raise ExportError(f"manifest has unknown keys {unknown}")
    for key in ("d", "d_v", "concept_vocab"):
        if not isinstance(raw[key], int):
            raise ExportError(f"manifest '{key}' must be an integer")
    base = path.parent
    manifest = ExportManifest(
        corpus=(base / raw["corpus"]).resolve(),
        out_dir=(base / raw["out_dir"]).resolve(),
        text_encoder=str(raw["text_encoder"]),
        image_backbone=str(raw["image_backbone"]),
        detector=str(raw["detector"]),
        d=raw["d"],
        d_v=raw["d_v"],
        concept_vocab=raw["concept_vocab"],
    )
    manifest.validate()
    return manifest
