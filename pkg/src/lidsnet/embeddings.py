"""Pretrained word-vector parsing and embedding table initialization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .text import PAD


class EmbeddingFileError(ValueError):
    pass


def _is_fasttext_header(parts) -> bool:
    return len(parts) == 2 and all(p.isdigit() for p in parts)


def parse_vector_file(path, expected_dim: int, vocab=None) -> dict[str, np.ndarray]:
    """Read a GloVe/fastText text vector file.

    Lines are ``token v1 ... vD``. A fastText ``count dim`` header on the first
    line is skipped. With ``vocab`` only tokens it contains are kept. The first
    occurrence of a duplicated token wins.
    """
    path = Path(path)
    if not path.is_file():
        raise EmbeddingFileError(f"vector file not found: {path}")
    out: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if lineno == 1 and _is_fasttext_header(parts):
                if int(parts[1]) != expected_dim:
                    raise EmbeddingFileError(
                        f"{path}: header declares dim {parts[1]}, expected {expected_dim}"
                    )
                continue
            if parts == [""]:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != expected_dim:
                raise EmbeddingFileError(
                    f"{path}:{lineno}: expected {expected_dim} values, found {len(values)}"
                )
            if token in out or (vocab is not None and token not in vocab):
                continue
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingFileError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingFileError(f"{path}:{lineno}: non-finite value")
            out[token] = vec
    return out


@dataclass(frozen=True)
class InitMode:
    kind: str  # "pretrained" or "random"
    path: str | None = None

    @classmethod
    def pretrained(cls, path):
        return cls("pretrained", str(path))

    @classmethod
    def random(cls):
        return cls("random")


@dataclass
class WordEmbeddingTable:
    matrix: np.ndarray
    covered: np.ndarray  # bool per vocab row
    trainable: bool = True

    @property
    def coverage(self) -> float:
        # reserved PAD/UNK rows are never expected in a vector file
        n = len(self.covered) - 2
        return float(self.covered[2:].sum() / n) if n > 0 else 0.0


def uniform_table(rng, rows, dim, scale, dtype):
    table = rng.uniform(-scale, scale, size=(rows, dim)).astype(dtype)
    table[PAD] = 0.0
    return table


def build_word_table(vocab, mode: InitMode, dim=50, seed=0, scale=0.05, dtype=np.float32,
                     vectors: dict | None = None) -> WordEmbeddingTable:
    """Word table; pretrained rows are copied, everything else is uniform(-scale, scale).

    ``vectors`` may carry an already-parsed file to avoid reading it again.
    """
    rng = np.random.default_rng(seed)
    table = uniform_table(rng, len(vocab), dim, scale, dtype)
    covered = np.zeros(len(vocab), dtype=bool)
    if mode.kind == "pretrained":
        if vectors is None:
            vectors = parse_vector_file(mode.path, dim, vocab=vocab)
        for tok, vec in vectors.items():
            if len(vec) != dim:
                raise EmbeddingFileError(f"vector for {tok!r} has dim {len(vec)}, expected {dim}")
            i = vocab.id_of.get(tok)
            if i is not None and i != PAD:
                table[i] = vec
                covered[i] = True
    elif mode.kind != "random":
        raise ValueError(f"unknown init mode {mode.kind!r}")
    return WordEmbeddingTable(table, covered)


def build_char_table(char_vocab, dim=16, seed=0, scale=0.05, dtype=np.float32) -> np.ndarray:
    return uniform_table(np.random.default_rng(seed), len(char_vocab), dim, scale, dtype)
