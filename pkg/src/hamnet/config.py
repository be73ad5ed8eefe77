"""Pipeline configuration: a flat key=value file with CLI overrides.

Defaults reflect the full-scale recipe (d=768, 12 heads, 4 ViT layers,
2 graph layers, 3 interaction rounds, dropout 0.1, lr 3e-5, 60 epochs,
batches 32/16). Desk-scale runs override these through a config file;
flags given on the command line win over the file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import MAX_TOKENS
from .errors import ConfigError
from .nn import ACTIVATIONS
from .relevance import RELEVANCE_MODES


@dataclass
class PipelineConfig:
    # architecture
    d: int = 768
    heads: int = 12
    text_layers: int = 1
    vit_layers: int = 4
    rgcn_layers: int = 2
    interaction_rounds: int = 3
    activation: str = "relu"
    relevance_mode: str = "vector"
    bounded_gate: bool = True
    positional: bool = True
    constrained_decoding: bool = False
    max_len: int = MAX_TOKENS
    # optimization
    learning_rate: float = 3e-5
    batch_train: int = 32
    batch_eval: int = 16
    epochs: int = 60
    patience: int = 10
    grad_clip: float = 0.0  # 0 disables; 5.0 clips at global norm 5
    dropout: float = 0.1
    seed: int = 0
    # paths
    train_path: str = ""
    val_path: str = ""
    test_path: str = ""
    meta_path: str = ""
    checkpoint_dir: str = "checkpoint"

    def validate(self) -> None:
        if self.d <= 0:
            raise ConfigError(f"d must be positive, got {self.d}")
        if self.heads <= 0 or self.d % self.heads != 0:
            raise ConfigError(f"heads={self.heads} must be positive and divide d={self.d}")
        for name in ("text_layers", "vit_layers", "rgcn_layers", "interaction_rounds"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation '{self.activation}'")
        if self.relevance_mode not in RELEVANCE_MODES:
            raise ConfigError(f"unknown relevance_mode '{self.relevance_mode}'")
        if not (1 <= self.max_len <= MAX_TOKENS):
            raise ConfigError(f"max_len must sit in [1, {MAX_TOKENS}]")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_train < 1 or self.batch_eval < 1:
            raise ConfigError("batch sizes must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be non-negative (0 disables)")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout must sit in [0, 1)")


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    typ = _FIELD_TYPES[key]
    raw = raw.strip()
    if typ == "bool":
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key '{key}' expects a boolean, got '{raw}'")
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key '{key}' expects {typ}, got '{raw}'")
    return raw


def parse_config_file(path: str | Path) -> dict:
    """Read `key = value` lines; '#' starts a comment; blank lines skipped."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{line}'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        values[key] = _coerce(key, raw)
    return values


def build_config(file_path: str | None = None, overrides: dict | None = None
                 ) -> PipelineConfig:
    """Defaults, then the config file, then CLI overrides; validates the result."""
    values: dict = {}
    if file_path:
        values.update(parse_config_file(file_path))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key '{key}'")
        values[key] = val
    cfg = PipelineConfig(**values)
    cfg.validate()
    return cfg
