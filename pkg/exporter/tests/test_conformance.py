"""Conformance with the consuming pipeline, exercised over its public
surface only: the fixture file formats, the installed loader, and the
command line. A five-example corpus is exported, validated by the
pipeline's own loader, and trained on for one epoch.
"""

import json
import subprocess
import sys

import numpy as np

from hamnet_export.cli import main
from hamnet_export.encoders import ToyTextEncoder

from hamnet.data import load_dataset, load_meta


def test_exported_fixtures_pass_pipeline_validation(toy_corpus):
    assert main(["--manifest", str(toy_corpus["manifest"]), "--quiet"]) == 0
    meta = load_meta(toy_corpus["out"] / "meta.json")
    assert (meta.d, meta.d_v, meta.concept_vocab) == (16, 8, 16)
    counts = {}
    for split, expect in (("train", 3), ("val", 1), ("test", 1)):
        examples = load_dataset(toy_corpus["out"] / f"{split}.jsonl", meta)
        counts[split] = len(examples)
        for ex in examples:
            assert ex.sentence.word_feats.shape == (len(ex.sentence.tokens), 16)
            assert len(ex.objects) <= 15
    assert counts == {"train": 3, "val": 1, "test": 1}


def test_word_vectors_equal_manual_piece_sums(toy_corpus):
    """One sentence checked by hand: each exported word row must equal
    the running sum of its piece vectors, bit for bit (the JSON round
    trip preserves every float exactly)."""
    assert main(["--manifest", str(toy_corpus["manifest"]), "--quiet"]) == 0
    first = json.loads(
        (toy_corpus["out"] / "train.jsonl").read_text().splitlines()[0])
    assert first["tokens"] == ["Alice", "photographed", "waterfalls",
                               "near", "Reykjavik"]
    enc = ToyTextEncoder(16)
    assert len(enc.pieces("waterfalls")) == 3
    for i, word in enumerate(first["tokens"]):
        manual = np.zeros(16)
        for piece in enc.pieces(word):
            manual += enc.piece_vector(piece)
        exported = np.asarray(first["word_feats"][i], dtype=np.float64)
        assert exported.tobytes() == manual.tobytes(), word


def test_exported_fixtures_train_for_one_epoch(toy_corpus, tmp_path):
    assert main(["--manifest", str(toy_corpus["manifest"]), "--quiet"]) == 0
    out = toy_corpus["out"]
    cfg = tmp_path / "train.cfg"
    cfg.write_text(
        "d = 16\nheads = 2\ntext_layers = 1\nvit_layers = 1\nrgcn_layers = 1\n"
        "interaction_rounds = 1\ndropout = 0.0\nlearning_rate = 0.01\n"
        "batch_train = 2\nseed = 3\n"
        f"train_path = {out / 'train.jsonl'}\n"
        f"val_path = {out / 'val.jsonl'}\n"
        f"meta_path = {out / 'meta.json'}\n"
        f"checkpoint_dir = {tmp_path / 'ck'}\n"
    )
    proc = subprocess.run(
        [sys.executable, "-m", "hamnet.cli", "train",
         "--config", str(cfg), "--epochs", "1"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "ck" / "manifest.json").exists()
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert manifest["training"]["epochs_run"] == 1
