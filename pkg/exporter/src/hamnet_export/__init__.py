"""Fixture exporter: raw corpus in, hamnet training files out.

The package turns a human-annotated corpus (tokens, BIO2 tags, an image
per sentence) into the exact JSONL/meta fixture format the hamnet
pipeline trains on. Encoders are pluggable; deterministic toy encoders
ship for tests and smoke runs, adapters for pretrained models load
lazily so the core package stays dependency-light.
"""

from .errors import CorpusError, ExportError
from .manifest import ExportManifest, load_manifest
from .export import export

__all__ = ["CorpusError", "ExportError", "ExportManifest", "load_manifest", "export"]
