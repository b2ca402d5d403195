"""Tokenization, vocabularies, sentence encoding and corpus loading."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
UNSEEN = -1
UNSEEN_NAME = "UNSEEN"
SPLITS = ("train", "valid", "test")


class DatasetError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocab:
    """Dense id assignment in first-occurrence order; ids 0 and 1 are PAD and UNK."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must start with the PAD and UNK entries")
        self.tokens = tokens
        self.id_of = {tok: i for i, tok in enumerate(tokens)}
        if len(self.id_of) != len(tokens):
            raise ValueError("duplicate vocabulary entries")

    @classmethod
    def from_items(cls, items):
        seen = dict.fromkeys([PAD_TOKEN, UNK_TOKEN])
        for item in items:
            seen.setdefault(item, None)
        return cls(seen)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.id_of

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def lookup(self, token: str) -> int:
        return self.id_of.get(token, UNK)

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids if i != PAD]


class WordVocab(Vocab):
    pass


class CharVocab(Vocab):
    pass


def build_vocabs(train_sentences) -> tuple[WordVocab, CharVocab]:
    """Word and character vocabularies over tokenized training sentences."""
    train_sentences = [list(s) for s in train_sentences]
    if not any(train_sentences):
        raise DatasetError("cannot build vocabularies from an empty corpus")
    words = WordVocab.from_items(tok for sent in train_sentences for tok in sent)
    chars = CharVocab.from_items(ch for sent in train_sentences for tok in sent for ch in tok)
    return words, chars


@dataclass(frozen=True)
class EncodedSentence:
    word_ids: np.ndarray  # (T_max,)
    char_ids: np.ndarray  # (T_max, L_max)
    true_length: int


def encode_sentence(tokens, word_vocab, char_vocab, t_max, l_max) -> EncodedSentence:
    if not tokens:
        raise ValueError("cannot encode an empty token list")
    tokens = tokens[:t_max]
    word_ids = np.zeros(t_max, dtype=np.int32)
    char_ids = np.zeros((t_max, l_max), dtype=np.int32)
    for j, tok in enumerate(tokens):
        word_ids[j] = word_vocab.lookup(tok)
        chars = tok[:l_max]
        char_ids[j, :len(chars)] = [char_vocab.lookup(ch) for ch in chars]
    return EncodedSentence(word_ids, char_ids, len(tokens))


def encode_batch(token_lists, word_vocab, char_vocab, t_max, l_max):
    """Stacked (word_ids, char_ids, lengths) arrays for many sentences."""
    n = len(token_lists)
    word_ids = np.zeros((n, t_max), dtype=np.int32)
    char_ids = np.zeros((n, t_max, l_max), dtype=np.int32)
    lengths = np.zeros(n, dtype=np.int32)
    for i, tokens in enumerate(token_lists):
        enc = encode_sentence(tokens, word_vocab, char_vocab, t_max, l_max)
        word_ids[i], char_ids[i], lengths[i] = enc.word_ids, enc.char_ids, enc.true_length
    return word_ids, char_ids, lengths


@dataclass
class LabeledDataset:
    """Encoded sentences of one split, stored as stacked arrays."""

    word_ids: np.ndarray
    char_ids: np.ndarray
    lengths: np.ndarray
    labels: np.ndarray
    label_names: list
    split: str
    tokens: list

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.word_ids) == len(self.char_ids) == len(self.lengths) == n):
            raise DatasetError("sentence and label counts differ")
        if n and self.labels.max() >= len(self.label_names):
            raise DatasetError("label id out of range")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> EncodedSentence:
        return EncodedSentence(self.word_ids[i], self.char_ids[i], int(self.lengths[i]))

    @property
    def sentences(self) -> list[EncodedSentence]:
        return [self[i] for i in range(len(self))]

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.word_ids[idx], self.char_ids[idx], self.lengths[idx], self.labels[idx],
            self.label_names, self.split, [self.tokens[i] for i in idx],
        )


@dataclass
class RawSplit:
    tokens: list
    labels: list


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [ln.rstrip("\r") for ln in lines]


def read_split(root, split: str) -> RawSplit:
    """Read ``<root>/<split>/seq.in`` and ``label``; any ``seq.out`` is ignored."""
    d = Path(root) / split
    seq_path, label_path = d / "seq.in", d / "label"
    seqs = _read_lines(seq_path)
    labels = _read_lines(label_path)
    if len(seqs) != len(labels):
        raise DatasetError(
            f"{d}: seq.in has {len(seqs)} lines but label has {len(labels)} "
            f"(first unmatched line {min(len(seqs), len(labels)) + 1})"
        )
    tokens = []
    for lineno, (seq, label) in enumerate(zip(seqs, labels), 1):
        toks = tokenize(seq)
        if not toks:
            raise DatasetError(f"{seq_path}:{lineno}: empty utterance")
        if not label.strip():
            raise DatasetError(f"{label_path}:{lineno}: empty label")
        tokens.append(toks)
    return RawSplit(tokens, [lbl.strip() for lbl in labels])


def label_names_from(labels) -> list[str]:
    return list(dict.fromkeys(labels))


def make_dataset(raw: RawSplit, split, word_vocab, char_vocab, label_names, t_max, l_max):
    index = {name: i for i, name in enumerate(label_names)}
    labels = np.array([index.get(lbl, UNSEEN) for lbl in raw.labels], dtype=np.int64)
    w, c, n = encode_batch(raw.tokens, word_vocab, char_vocab, t_max, l_max)
    return LabeledDataset(w, c, n, labels, list(label_names), split, raw.tokens)


@dataclass
class Corpus:
    splits: dict
    word_vocab: WordVocab
    char_vocab: CharVocab
    label_names: list

    def __getitem__(self, split) -> LabeledDataset:
        return self.splits[split]


def load_dataset(root, t_max=46, l_max=20, vocabs=None, label_names=None, splits=SPLITS) -> Corpus:
    """Load a ``{train,valid,test}/{seq.in,label}`` corpus.

    Vocabularies and the intent list come from the train split unless given
    (e.g. from a trained model). Labels never seen in training map to UNSEEN.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    raw = {split: read_split(root, split) for split in splits}
    if vocabs is None:
        if "train" not in raw:
            raise DatasetError("vocabularies must be built from the train split")
        vocabs = build_vocabs(raw["train"].tokens)
    if label_names is None:
        label_names = label_names_from(raw["train"].labels)
    word_vocab, char_vocab = vocabs
    data = {
        split: make_dataset(r, split, word_vocab, char_vocab, label_names, t_max, l_max)
        for split, r in raw.items()
    }
    return Corpus(data, word_vocab, char_vocab, list(label_names))
