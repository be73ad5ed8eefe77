"""Shared builders for exporter tests: tiny images, corpora, manifests."""

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def make_image(path: Path, width: int, height: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    Image.fromarray(arr, "RGB").save(path)


def write_corpus(path: Path, rows: list[dict]) -> None:
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def write_manifest(path: Path, **overrides) -> Path:
    body = {
        "corpus": "corpus.jsonl",
        "out_dir": "fixtures",
        "text_encoder": "toy-text",
        "image_backbone": "toy-image",
        "detector": "toy-detector",
        "d": 16,
        "d_v": 8,
        "concept_vocab": 16,
    }
    body.update(overrides)
    path.write_text(json.dumps(body, indent=2) + "\n")
    return path


@pytest.fixture
def toy_corpus(tmp_path):
    """Five annotated sentences with images: 3 train, 1 val, 1 test.

    The first sentence carries 'waterfalls', which the toy text encoder
    splits into three pieces, so the piece-sum rule has something to
    check against.
    """
    images = tmp_path / "images"
    images.mkdir()
    for i, (w, h) in enumerate([(32, 24), (28, 20), (40, 30), (24, 24), (36, 18)]):
        make_image(images / f"{i}.png", w, h, seed=100 + i)
    rows = [
        {"tokens": ["Alice", "photographed", "waterfalls", "near", "Reykjavik"],
         "tags": ["B-PER", "O", "O", "O", "B-LOC"],
         "image": "images/0.png", "split": "train"},
        {"tokens": ["the", "Northwind", "Ensemble", "played", "downtown"],
         "tags": ["O", "B-ORG", "I-ORG", "O", "O"],
         "image": "images/1.png", "split": "train"},
        {"tokens": ["nothing", "notable", "happened", "today"],
         "tags": ["O", "O", "O", "O"],
         "image": "images/2.png", "split": "train"},
        {"tokens": ["Marco", "toured", "the", "Blue-Ridge", "caves"],
         "tags": ["B-PER", "O", "O", "B-LOC", "I-LOC"],
         "image": "images/3.png", "split": "val"},
        {"tokens": ["the", "festival", "returns", "to", "Osaka"],
         "tags": ["O", "B-MISC", "O", "O", "B-LOC"],
         "image": "images/4.png", "split": "test"},
    ]
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus, rows)
    manifest = write_manifest(tmp_path / "manifest.json")
    return {"root": tmp_path, "corpus": corpus, "manifest": manifest,
            "rows": rows, "out": tmp_path / "fixtures"}
