"""Pluggable text and vision encoders.

Three roles, looked up by registry id:

- a text encoder maps a token list to per-word vectors plus one
  sentence vector. Words its tokenizer splits are represented by the
  sum of their piece vectors, so word count in equals row count out;
- an image backbone maps a PIL image to one feature vector. The same
  backbone also encodes region crops, which keeps global and object
  features in one space;
- a detector maps a PIL image to scored candidate boxes with class ids.
  Its class list is the concept vocabulary the export declares.

The toy encoders are pure functions of their input bytes: same file,
same vectors, on every machine. Adapters for pretrained models import
their frameworks lazily and insist on locally available weights, since
an export job must never hit the network.
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ExportError


def _seed_from(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


@dataclass
class Candidate:
    """One detection in pixel space: corner box, class id, score."""
    box: tuple[float, float, float, float]  # (x1, y1, x2, y2)
    concept_id: int
    score: float


# ---------------------------------------------------------------------------
# toy encoders


class ToyTextEncoder:
    """Deterministic hash-based word vectors with a real piece split.

    A word is lowercased, split on hyphens, and then chopped into
    4-character windows; each piece hashes to a fixed random vector and
    the word vector is the sum of its piece vectors. The sentence
    vector is a squashed mean of the word vectors.
    """

    version = "toy-text/1"

    def __init__(self, d: int):
        if d <= 0:
            raise ExportError(f"text width must be positive, got {d}")
        self.d = d

    def pieces(self, word: str) -> list[str]:
        out = []
        for part in word.lower().split("-"):
            while len(part) > 4:
                out.append(part[:4])
                part = part[4:]
            if part:
                out.append(part)
        return out or [word.lower()]

    def piece_vector(self, piece: str) -> np.ndarray:
        rng = np.random.default_rng(_seed_from("piece:" + piece))
        return rng.standard_normal(self.d) / math.sqrt(self.d)

    def encode(self, tokens: list[str]) -> tuple[np.ndarray, np.ndarray]:
        rows = np.zeros((len(tokens), self.d))
        for i, word in enumerate(tokens):
            for piece in self.pieces(word):
                rows[i] += self.piece_vector(piece)
        return rows, np.tanh(rows.mean(axis=0))


class ToyImageBackbone:
    """Fixed random projection of an 8x8 thumbnail.

    Deterministic given the pixel content: the projection matrix is
    seeded from the version string, never from the image.
    """

    version = "toy-image/1"

    def __init__(self, d_v: int):
        if d_v <= 0:
            raise ExportError(f"vision width must be positive, got {d_v}")
        self.d_v = d_v
        rng = np.random.default_rng(_seed_from("backbone:" + self.version))
        self._proj = rng.standard_normal((8 * 8 * 3, d_v)) / math.sqrt(8 * 8 * 3)

    def encode(self, image: Image.Image) -> np.ndarray:
        small = image.convert("RGB").resize((8, 8), Image.Resampling.BILINEAR)
        x = np.asarray(small, dtype=np.float64).reshape(-1) / 255.0
        return np.tanh(x @ self._proj)


TOY_CLASSES: tuple[str, ...] = (
    "person", "animal", "vehicle", "building", "plant", "food",
    "furniture", "device", "clothing", "sign", "tool", "container",
    "book", "screen", "instrument", "landmark",
)


class ToyDetector:
    """Hash-seeded candidate boxes, always more than the fixture cap.

    The candidate count is derived from the image bytes (20 to 40) so
    truncation logic always has work to do; tests can pin it with the
    ``candidates`` argument.
    """

    version = "toy-detector/1"
    classes = TOY_CLASSES

    def __init__(self, candidates: int | None = None):
        self._candidates = candidates

    def detect(self, image: Image.Image) -> list[Candidate]:
        rgb = image.convert("RGB")
        w, h = rgb.size
        digest = hashlib.sha256(np.asarray(rgb, dtype=np.uint8).tobytes()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        n = self._candidates if self._candidates is not None else 20 + digest[8] % 21
        out = []
        for _ in range(n):
            x1 = rng.uniform(0.0, 0.9 * w)
            y1 = rng.uniform(0.0, 0.9 * h)
            x2 = rng.uniform(x1 + 0.05 * w, w)
            y2 = rng.uniform(y1 + 0.05 * h, h)
            out.append(Candidate(
                box=(x1, y1, x2, y2),
                concept_id=int(rng.integers(len(self.classes))),
                score=float(rng.uniform(0.05, 0.99)),
            ))
        return out


# ---------------------------------------------------------------------------
# adapters for pretrained models (lazy imports, local weights only)


class HFTextEncoder:
    """Contextual word vectors from a locally cached transformer.

    The tokenizer's word alignment drives the piece merge: every hidden
    state whose word id points at word i is summed into row i. The
    model's own sequence-start state is the sentence vector.
    """

    def __init__(self, d: int, checkpoint: str = "bert-base-uncased"):
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoTokenizer
        except ImportError as e:
            raise ExportError(f"text encoder 'hf' needs transformers and torch installed: {e}")
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(checkpoint, local_files_only=True)
            self._model = AutoModel.from_pretrained(checkpoint, local_files_only=True)
        except Exception as e:
            raise ExportError(f"checkpoint '{checkpoint}' is not cached locally "
                              f"(export jobs never download): {e}")
        self._model.eval()
        width = int(self._model.config.hidden_size)
        if width != d:
            raise ExportError(f"'{checkpoint}' emits width {width}, manifest declares d={d}")
        self.d = d
        self.version = f"hf/{checkpoint}"

    def encode(self, tokens: list[str]) -> tuple[np.ndarray, np.ndarray]:
        import torch
        enc = self._tokenizer(tokens, is_split_into_words=True,
                              return_tensors="pt", truncation=True)
        with torch.no_grad():
            hidden = self._model(**enc).last_hidden_state[0].double().numpy()
        rows = np.zeros((len(tokens), self.d))
        for pos, word_id in enumerate(enc.word_ids(0)):
            if word_id is not None:
                rows[word_id] += hidden[pos]
        return rows, hidden[0].copy()


class TorchvisionBackbone:
    """Penultimate-layer features of a torchvision classifier (2048-wide
    for the default resnet50), using the weights' own preprocessing."""

    def __init__(self, d_v: int, arch: str = "resnet50"):
        try:
            import torch
            import torchvision
        except ImportError as e:
            raise ExportError(f"image backbone 'torchvision' needs torch and torchvision: {e}")
        try:
            weights = torchvision.models.get_model_weights(arch).DEFAULT
            model = torchvision.models.get_model(arch, weights=weights)
        except Exception as e:
            raise ExportError(f"weights for '{arch}' are not available locally: {e}")
        model.eval()
        self._transform = weights.transforms()
        self._trunk = torch.nn.Sequential(*list(model.children())[:-1])
        self._torch = torch
        with torch.no_grad():
            probe = self._trunk(torch.zeros(1, 3, 224, 224)).flatten(1)
        if probe.shape[1] != d_v:
            raise ExportError(f"'{arch}' emits width {probe.shape[1]}, "
                              f"manifest declares d_v={d_v}")
        self.d_v = d_v
        self.version = f"torchvision/{arch}"

    def encode(self, image: Image.Image) -> np.ndarray:
        torch = self._torch
        x = self._transform(image.convert("RGB")).unsqueeze(0)
        with torch.no_grad():
            return self._trunk(x).flatten(1)[0].double().numpy()


class TorchvisionDetector:
    """Boxes, classes and scores from a torchvision detection model.

    Region features are not produced here: the exporter encodes each
    kept region crop with the image backbone, which keeps object and
    global features in one space regardless of the detector used.
    """

    def __init__(self, arch: str = "fasterrcnn_resnet50_fpn"):
        try:
            import torch  # noqa: F401
            import torchvision
        except ImportError as e:
            raise ExportError(f"detector 'torchvision' needs torch and torchvision: {e}")
        try:
            weights = torchvision.models.get_model_weights(arch).DEFAULT
            self._model = torchvision.models.get_model(arch, weights=weights)
        except Exception as e:
            raise ExportError(f"weights for '{arch}' are not available locally: {e}")
        self._model.eval()
        self._transform = weights.transforms()
        self._torch = __import__("torch")
        self.classes = tuple(weights.meta["categories"])
        self.version = f"torchvision/{arch}"

    def detect(self, image: Image.Image) -> list[Candidate]:
        torch = self._torch
        x = self._transform(image.convert("RGB"))
        with torch.no_grad():
            (pred,) = self._model([x])
        out = []
        for box, label, score in zip(pred["boxes"], pred["labels"], pred["scores"]):
            out.append(Candidate(box=tuple(float(v) for v in box),
                                 concept_id=int(label),
                                 score=float(score)))
        return out


# ---------------------------------------------------------------------------
# registry


_TEXT_ENCODERS = {
    "toy-text": lambda d: ToyTextEncoder(d),
    "hf-bert": lambda d: HFTextEncoder(d, "bert-base-uncased"),
}

_IMAGE_BACKBONES = {
    "toy-image": lambda d_v: ToyImageBackbone(d_v),
    "torchvision-resnet50": lambda d_v: TorchvisionBackbone(d_v, "resnet50"),
}

_DETECTORS = {
    "toy-detector": lambda: ToyDetector(),
    "torchvision-frcnn": lambda: TorchvisionDetector(),
}


def _lookup(table: dict, kind: str, name: str):
    if name not in table:
        known = ", ".join(sorted(table))
        raise ExportError(f"unknown {kind} '{name}' (known: {known})")
    return table[name]


def make_text_encoder(name: str, d: int):
    return _lookup(_TEXT_ENCODERS, "text encoder", name)(d)


def make_image_backbone(name: str, d_v: int):
    return _lookup(_IMAGE_BACKBONES, "image backbone", name)(d_v)


def make_detector(name: str):
    return _lookup(_DETECTORS, "detector", name)()
