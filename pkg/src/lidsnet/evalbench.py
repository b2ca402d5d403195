"""Accuracy, confusion matrices, footprint and latency reports, hyperparameter sweeps."""

from __future__ import annotations

import csv
import gzip
import itertools
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import model_store
from .text import UNSEEN, UNSEEN_NAME, LabeledDataset
from .trainer import Model, TrainingLog, class_probs, predict_proba, train

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # rows = true class, cols = predicted class
    n_samples: int
    label_names: list

    def write_confusion_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\predicted"] + list(self.label_names))
            for name, row in zip(self.label_names, self.confusion):
                w.writerow([name] + [int(x) for x in row])

    def summary(self) -> str:
        lines = [f"accuracy={self.accuracy:.6f}", f"n_samples={self.n_samples}"]
        for name, row in zip(self.label_names, self.confusion):
            support = int(row.sum())
            if support:
                idx = self.label_names.index(name)
                lines.append(f"  {name}: {int(row[idx])}/{support}")
        return "\n".join(lines)


def evaluate(model: Model, dataset: LabeledDataset) -> EvalReport:
    """Exact-match intent accuracy; UNSEEN-labelled samples always count as errors."""
    if len(dataset) == 0:
        raise ValueError(f"cannot evaluate on an empty {dataset.split} split")
    if list(dataset.label_names) != list(model.label_names):
        raise ValueError("dataset intent list differs from the model's; load it with the model vocabularies")
    pred = np.argmax(class_probs(model.params, model.config, dataset), axis=1)
    names = list(model.label_names)
    truth = dataset.labels.copy()
    if np.any(truth == UNSEEN):
        truth[truth == UNSEEN] = len(names)
        names.append(UNSEEN_NAME)
    C = len(names)
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (truth, pred), 1)
    acc = float(np.trace(confusion) / len(dataset))
    return EvalReport(acc, confusion, len(dataset), names)


@dataclass
class FootprintReport:
    components: dict
    serialized_bytes: int
    gzip_bytes: int

    @property
    def total(self) -> int:
        return int(sum(self.components.values()))


COMPONENTS = {
    "word_embedding": ("word_emb",),
    "char_embedding": ("char_emb",),
    "char_cnn": ("conv",),
    "bilstm": ("lstm_",),
    "classifier": ("dense",),
}


def count_params(model: Model, with_size=True) -> FootprintReport:
    counts = dict.fromkeys(COMPONENTS, 0)
    for name, arr in model.params.items():
        comp = next(c for c, prefixes in COMPONENTS.items() if name.startswith(prefixes))
        counts[comp] += int(arr.size)
    size = gz = 0
    if with_size:
        data = model_store.to_bytes(model)
        size, gz = len(data), len(gzip.compress(data, mtime=0))
    return FootprintReport(counts, size, gz)


@dataclass
class LatencyReport:
    times_ms: np.ndarray
    warmup: int

    @property
    def median(self) -> float:
        return float(np.median(self.times_ms))

    @property
    def p95(self) -> float:
        return float(np.percentile(self.times_ms, 95))

    @property
    def max(self) -> float:
        return float(self.times_ms.max())

    @property
    def mean(self) -> float:
        return float(self.times_ms.mean())


def benchmark_latency(model: Model, utterances, runs=200, warmup=20) -> LatencyReport:
    """Wall time of single-utterance prediction (tokenize, encode, classify)."""
    if runs < 100:
        raise ValueError("runs must be >= 100")
    if warmup < 10:
        raise ValueError("warmup must be >= 10")
    utterances = [u for u in utterances if u.strip()]
    if not utterances:
        raise ValueError("no non-empty utterances to benchmark")
    for i in range(warmup):
        predict_proba(model, [utterances[i % len(utterances)]])
    times = np.empty(runs)
    for i in range(runs):
        u = utterances[i % len(utterances)]
        t0 = time.perf_counter()
        predict_proba(model, [u])
        times[i] = (time.perf_counter() - t0) * 1000.0
    return LatencyReport(times, warmup)


SWEEP_KEYS = {"margin": ("margin", float), "lstm-units": ("lstm_units", int)}


def parse_grid(spec) -> dict:
    """``["margin=0.1,0.2", "lstm-units=16,24"]`` -> ``{"margin": [0.1, 0.2], ...}``."""
    if isinstance(spec, str):
        spec = [spec]
    grid = {}
    for item in spec:
        if "=" not in item:
            raise ValueError(f"grid entry {item!r} is not key=v1,v2,...")
        key, values = item.split("=", 1)
        key = key.strip()
        if key not in SWEEP_KEYS:
            raise ValueError(f"unknown sweep key {key!r}; expected one of {sorted(SWEEP_KEYS)}")
        cast = SWEEP_KEYS[key][1]
        vals = [cast(v) for v in values.split(",") if v.strip()]
        if not vals:
            raise ValueError(f"no values for sweep key {key!r}")
        grid[key] = vals
    if not grid:
        raise ValueError("empty sweep grid")
    return grid


def sweep(corpus, base_cfg, grid: dict, vectors=None, on_result=None) -> list[dict]:
    """Train one model per grid point (cartesian product) and report validation accuracy."""
    keys = list(grid)
    rows = []
    for values in itertools.product(*(grid[k] for k in keys)):
        changes = {SWEEP_KEYS[k][0]: v for k, v in zip(keys, values)}
        cfg = base_cfg.replace(**changes)
        setting = ";".join(f"{k}={v}" for k, v in zip(keys, values))
        log.info("sweep point %s", setting)
        model = train(corpus, cfg, TrainingLog(), vectors=vectors)
        acc = evaluate(model, corpus["valid"]).accuracy
        row = {"setting": setting, **dict(zip(keys, values)), "valid_accuracy": acc}
        rows.append(row)
        if on_result is not None:
            on_result(row)
    return rows


def write_sweep_csv(rows, path):
    if not rows:
        raise ValueError("no sweep rows to write")
    fields = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
