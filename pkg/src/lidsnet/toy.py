"""Small synthetic corpora in the ``{split}/{seq.in,label}`` layout."""

from __future__ import annotations

from pathlib import Path

import numpy as np

DEFAULT_VOCABS = {
    "PlayMusic": ["play", "song", "music", "jazz", "album", "track", "tune", "artist", "radio"],
    "GetWeather": ["weather", "rain", "sunny", "forecast", "cold", "snow", "wind", "humid", "storm"],
    "BookTable": ["book", "table", "restaurant", "dinner", "reserve", "seat", "lunch", "party", "cafe"],
}


def toy_utterances(n_per_class, classes=("PlayMusic", "GetWeather"), seed=0, min_len=2, max_len=7):
    """Utterances whose classes use disjoint token sets, so the task is separable."""
    rng = np.random.default_rng(seed)
    utterances, labels = [], []
    for name in classes:
        words = DEFAULT_VOCABS[name]
        for _ in range(n_per_class):
            n = int(rng.integers(min_len, max_len + 1))
            utterances.append(" ".join(rng.choice(words, n)))
            labels.append(name)
    order = rng.permutation(len(labels))
    return [utterances[i] for i in order], [labels[i] for i in order]


def write_corpus(root, splits: dict) -> Path:
    """Write ``{split: (utterances, labels)}`` to disk and return the root."""
    root = Path(root)
    for split, (utterances, labels) in splits.items():
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        (d / "seq.in").write_text("".join(u + "\n" for u in utterances), encoding="utf-8")
        (d / "label").write_text("".join(lbl + "\n" for lbl in labels), encoding="utf-8")
    return root


def write_toy_corpus(root, classes=("PlayMusic", "GetWeather"), n_train=30, n_valid=8, n_test=8, seed=0):
    return write_corpus(root, {
        "train": toy_utterances(n_train, classes, seed),
        "valid": toy_utterances(n_valid, classes, seed + 1),
        "test": toy_utterances(n_test, classes, seed + 2),
    })
