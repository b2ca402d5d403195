"""Run configuration with the default training recipe."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

EMBEDDING_MODES = ("random", "glove", "fasttext", "char-only")
PRECISIONS = ("f32", "f64")

# dotted config-file keys that map onto flat field names
KEY_ALIASES = {
    "embedding.dim": "word_dim",
    "embedding.mode": "embeddings",
    "embedding.path": "embedding_path",
    "numeric.precision": "precision",
    "margin": "margin",
    "lstm-units": "lstm_units",
    "pairs-per-class": "pairs_per_class",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    # sequence limits
    t_max: int = 46
    l_max: int = 20
    # encoder
    char_dim: int = 16
    word_dim: int = 50
    conv_kernels: tuple = (2, 3)
    conv_filters: int = 16
    lstm_units: int = 24
    dropout: float = 0.2
    recurrent_dropout: float = 0.2
    # classifier head
    hidden_units: int = 64
    # phase I
    margin: float = 0.2
    pairs_per_class: int = 50000
    phase1_batch_size: int = 512
    phase1_epochs: int = 10
    phase1_patience: int = 3
    valid_pairs_per_class: int = 500
    # phase II
    phase2_batch_size: int = 32
    phase2_epochs: int = 100
    phase2_patience: int = 10
    freeze_encoder: bool = False
    # optimizer
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # mode
    phases: int = 2
    embeddings: str = "glove"
    embedding_path: str | None = None
    init_scale: float = 0.05
    precision: str = "f32"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def dtype(self):
        import numpy as np

        return np.float32 if self.precision == "f32" else np.float64

    @property
    def uses_word_embeddings(self) -> bool:
        return self.embeddings != "char-only"

    @property
    def word_feature_dim(self) -> int:
        char = self.conv_filters * len(self.conv_kernels)
        return char + (self.word_dim if self.uses_word_embeddings else 0)

    @property
    def sentence_dim(self) -> int:
        return 2 * self.lstm_units

    @property
    def mode_name(self) -> str:
        names = {"random": "random", "glove": "GloVe", "fasttext": "fastText", "char-only": "Char"}
        return f"{self.phases}P_{names[self.embeddings]}"

    def validate(self) -> None:
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if self.l_max < max(self.conv_kernels):
            raise ConfigError(f"l_max={self.l_max} is shorter than the largest conv kernel")
        for name in ("char_dim", "word_dim", "conv_filters", "lstm_units", "hidden_units",
                     "pairs_per_class", "phase1_batch_size", "phase2_batch_size",
                     "valid_pairs_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("phase1_epochs", "phase2_epochs", "phase1_patience", "phase2_patience"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 < self.margin < 2:
            raise ConfigError(f"margin must lie in (0, 2), got {self.margin}")
        for name in ("dropout", "recurrent_dropout"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.phases not in (1, 2):
            raise ConfigError(f"phases must be 1 or 2, got {self.phases}")
        if self.embeddings not in EMBEDDING_MODES:
            raise ConfigError(f"embeddings must be one of {EMBEDDING_MODES}, got {self.embeddings!r}")
        if self.embeddings in ("glove", "fasttext") and not self.embedding_path:
            raise ConfigError(f"embeddings={self.embeddings} requires an embedding path")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}")

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["conv_kernels"] = list(self.conv_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "conv_kernels" in d:
            d["conv_kernels"] = tuple(int(k) for k in d["conv_kernels"])
        return cls(**d)


def _coerce(name: str, raw: str):
    ftype = {f.name: f for f in dataclasses.fields(Config)}[name].type
    if name == "conv_kernels":
        return tuple(int(v) for v in raw.split(","))
    if name == "embedding_path":
        return raw or None
    if ftype == "bool":
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    return raw


def parse_overrides(pairs: dict[str, str]) -> dict:
    """Map string ``key=value`` overrides (dotted or flat keys) onto typed fields."""
    known = {f.name for f in dataclasses.fields(Config)}
    out = {}
    for key, raw in pairs.items():
        name = KEY_ALIASES.get(key, key.replace("-", "_"))
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            out[name] = _coerce(name, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return out


def read_config_file(path: str | Path) -> dict:
    """Read a ``key = value`` file; ``#`` starts a comment, quotes around values are stripped."""
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value.strip("\"'")
    return parse_overrides(pairs)
