"""Two-phase training: triplet-loss encoder pretraining, then classifier fine-tuning."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import encoder as enc
from . import nn
from .config import Config
from .embeddings import InitMode, build_word_table
from .text import CharVocab, EncodedSentence, LabeledDataset, WordVocab, encode_batch, tokenize

log = logging.getLogger(__name__)

COS_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# similarity and losses
# ---------------------------------------------------------------------------

def cosine_similarity(u, v):
    """u.v / (|u||v| + eps) along the last axis."""
    u, v = np.asarray(u), np.asarray(v)
    return (u * v).sum(-1) / (np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1) + COS_EPS)


def cosine_backward(u, v, ds):
    """Gradients of ``ds * cos(u, v)`` w.r.t. u and v."""
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    dot = (u * v).sum(-1, keepdims=True)
    den = nu * nv + COS_EPS
    ds = np.asarray(ds)[..., None]
    # d|u|/du = u/|u|, taken as zero at u = 0
    unit_u = np.divide(u, nu, out=np.zeros_like(u), where=nu > 0)
    unit_v = np.divide(v, nv, out=np.zeros_like(v), where=nv > 0)
    du = ds * (v / den - dot * nv * unit_u / den**2)
    dv = ds * (u / den - dot * nu * unit_v / den**2)
    return du, dv


@dataclass
class TripletLossResult:
    per_sample: np.ndarray
    grad_anchor: np.ndarray
    grad_positive: np.ndarray
    grad_negative: np.ndarray

    @property
    def total(self) -> float:
        return float(self.per_sample.sum())

    @property
    def mean(self) -> float:
        return float(self.per_sample.mean())

    @property
    def active(self) -> np.ndarray:
        return self.per_sample > 0


def triplet_loss(v_a, v_p, v_n, margin=0.2) -> TripletLossResult:
    """Hinge ``max(0, margin - s(a, p) + s(a, n))`` per sample; gradients are of the batch sum."""
    v_a, v_p, v_n = (np.atleast_2d(v) for v in (v_a, v_p, v_n))
    s_ap = cosine_similarity(v_a, v_p)
    s_an = cosine_similarity(v_a, v_n)
    hinge = margin - s_ap + s_an
    loss = np.maximum(hinge, 0.0)
    active = (hinge > 0).astype(v_a.dtype)
    da1, dp = cosine_backward(v_a, v_p, -active)
    da2, dn = cosine_backward(v_a, v_n, active)
    return TripletLossResult(loss, da1 + da2, dp, dn)


def cross_entropy(probs, label) -> tuple[float, np.ndarray]:
    """``-log probs[label]`` (floored at 1e-12) and its gradient w.r.t. probs."""
    probs = np.asarray(probs)
    if not 0 <= label < probs.shape[-1]:
        raise ValueError(f"label {label} out of range for {probs.shape[-1]} classes")
    loss, grad = nn.cross_entropy(probs, np.asarray(label))
    return float(loss), grad


# ---------------------------------------------------------------------------
# triplet sampling
# ---------------------------------------------------------------------------

class Triplet(NamedTuple):
    anchor: EncodedSentence
    positive: EncodedSentence
    negative: EncodedSentence


def unrank_pairs(k, n):
    """Map flat indices into the row-major list of pairs (i < j) of range(n)."""
    k = np.asarray(k, dtype=np.int64)
    total = n * (n - 1) // 2
    r = total - 1 - k  # rank from the end, where rows are triangular numbers
    row_from_end = ((np.sqrt(8.0 * r + 1) - 1) // 2).astype(np.int64)
    # guard float rounding at triangular boundaries
    row_from_end -= (row_from_end * (row_from_end + 1) // 2 > r)
    row_from_end += ((row_from_end + 1) * (row_from_end + 2) // 2 <= r)
    i = n - 2 - row_from_end
    start = i * (2 * n - i - 1) // 2
    j = k - start + i + 1
    return i, j


def sample_class_pairs(members, pairs_per_class, rng, top_up=True):
    """Unordered (A, P) index pairs within one class.

    Takes every pair when there are at most ``pairs_per_class`` of them, padding
    with resampled pairs up to ``pairs_per_class`` when ``top_up`` is set;
    otherwise samples ``pairs_per_class`` distinct pairs.
    """
    members = np.asarray(members)
    n = len(members)
    total = n * (n - 1) // 2
    if total <= pairs_per_class:
        k = np.arange(total)
        if top_up and total < pairs_per_class:
            k = np.concatenate([k, rng.integers(0, total, pairs_per_class - total)])
    else:
        k = rng.choice(total, size=pairs_per_class, replace=False)
    i, j = unrank_pairs(k, n)
    return np.stack([members[i], members[j]], axis=1)


def sample_triplets(labels, pairs_per_class, seed=0, skip_small=False, top_up=True, label_names=None):
    """(M, 3) array of dataset indices (anchor, positive, negative).

    Negatives are drawn uniformly from all samples of the other classes. The
    order of anchor and positive inside each pair is randomized.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    classes = np.unique(labels[labels >= 0])
    eligible = []
    for c in classes:
        members = np.flatnonzero(labels == c)
        if len(members) < 2:
            if skip_small:
                continue
            name = label_names[c] if label_names is not None else c
            raise ValueError(f"class {name!r} has {len(members)} sample(s); triplets need at least 2")
        eligible.append((c, members))
    if len(classes) < 2 or not eligible:
        if skip_small:
            return np.zeros((0, 3), dtype=np.int64)
        raise ValueError("triplet sampling needs at least two classes")
    out = []
    for c, members in eligible:
        pairs = sample_class_pairs(members, pairs_per_class, rng, top_up)
        flip = rng.random(len(pairs)) < 0.5
        pairs[flip] = pairs[flip][:, ::-1]
        others = np.flatnonzero((labels != c) & (labels >= 0))
        neg = others[rng.integers(0, len(others), len(pairs))]
        out.append(np.column_stack([pairs, neg]))
    return np.concatenate(out).astype(np.int64)


def triplets_of(dataset: LabeledDataset, index) -> list[Triplet]:
    return [Triplet(dataset[a], dataset[p], dataset[n]) for a, p, n in index]


# ---------------------------------------------------------------------------
# training log
# ---------------------------------------------------------------------------

@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)

    def add(self, epoch, split, metric, value):
        self.rows.append((epoch, split, metric, float(value)))
        log.info("epoch %s %s %s=%.6f", epoch, split, metric, value)

    def series(self, split, metric):
        return [v for _, s, m, v in self.rows if s == split and m == metric]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "split", "metric", "value"])
            for epoch, split, metric, value in self.rows:
                w.writerow([epoch, split, metric, repr(value)])


# ---------------------------------------------------------------------------
# phase I
# ---------------------------------------------------------------------------

def _batch(dataset, idx):
    return dataset.word_ids[idx], dataset.char_ids[idx], dataset.lengths[idx]


def _encode_all(params, cfg, dataset, batch_size=256):
    out = []
    for s in range(0, len(dataset), batch_size):
        idx = np.arange(s, min(s + batch_size, len(dataset)))
        out.append(enc.encode_batch(params, cfg, *_batch(dataset, idx))[0])
    return np.concatenate(out) if out else np.zeros((0, cfg.sentence_dim))


def triplet_eval(params, cfg, dataset, triplets, margin) -> float:
    """Mean triplet loss in inference mode."""
    if len(triplets) == 0:
        return math.nan
    used = np.unique(triplets)
    vecs = np.zeros((len(dataset), cfg.sentence_dim), dtype=params["lstm_fw_W"].dtype)
    vecs[used] = _encode_all(params, cfg, dataset.subset(used))
    res = triplet_loss(vecs[triplets[:, 0]], vecs[triplets[:, 1]], vecs[triplets[:, 2]], margin)
    return res.mean


def cosine_gap(params, cfg, dataset, max_samples=600, seed=0) -> float:
    """Mean intra-class minus mean inter-class cosine similarity over sentence pairs."""
    idx = np.flatnonzero(dataset.labels >= 0)
    if len(idx) > max_samples:
        idx = np.sort(np.random.default_rng(seed).choice(idx, max_samples, replace=False))
    vecs = _encode_all(params, cfg, dataset.subset(idx))
    labels = dataset.labels[idx]
    norms = np.linalg.norm(vecs, axis=1)
    sims = (vecs @ vecs.T) / (np.outer(norms, norms) + COS_EPS)
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(len(idx), dtype=bool)
    intra, inter = sims[same & off_diag], sims[~same]
    if intra.size == 0 or inter.size == 0:
        return math.nan
    return float(intra.mean() - inter.mean())


def _adam(cfg):
    return nn.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.adam_eps)


def _copy(params):
    return {k: v.copy() for k, v in params.items()}


def train_phase1(train: LabeledDataset, valid: LabeledDataset | None, cfg: Config, params: dict,
                 training_log: TrainingLog | None = None) -> dict:
    """Triplet-loss training of the shared encoder; returns the best-validation weights."""
    training_log = training_log if training_log is not None else TrainingLog()
    params = _copy(params)
    if cfg.phase1_epochs == 0:
        return params
    triplets = sample_triplets(train.labels, cfg.pairs_per_class, seed=[cfg.seed, 10],
                               label_names=train.label_names)
    val_triplets = None
    if valid is not None and len(valid):
        val_triplets = sample_triplets(valid.labels, cfg.valid_pairs_per_class, seed=[cfg.seed, 11],
                                       skip_small=True)
        if len(val_triplets) == 0:
            val_triplets = None
    log.info("phase I: %d training triplets, %s validation triplets", len(triplets),
             0 if val_triplets is None else len(val_triplets))

    def score(p):
        if val_triplets is not None:
            return triplet_eval(p, cfg, valid, val_triplets, cfg.margin)
        return triplet_eval(p, cfg, train, triplets[:cfg.valid_pairs_per_class * 4], cfg.margin)

    rng = np.random.default_rng([cfg.seed, 12])
    state = _adam(cfg)
    best, best_params, since_best = score(params), _copy(params), 0
    training_log.add(0, "valid", "triplet_loss", best)
    if valid is not None and len(valid):
        training_log.add(0, "valid", "cosine_gap", cosine_gap(params, cfg, valid))
    keys = enc.encoder_keys(cfg)
    bs = cfg.phase1_batch_size
    for epoch in range(1, cfg.phase1_epochs + 1):
        order = rng.permutation(len(triplets))
        total = 0.0
        for s in range(0, len(order), bs):
            trip = triplets[order[s:s + bs]]
            b = len(trip)
            flat = trip.T.reshape(-1)  # anchors, positives, negatives
            vecs, cache = enc.encode_batch(params, cfg, *_batch(train, flat), training=True, rng=rng)
            res = triplet_loss(vecs[:b], vecs[b:2 * b], vecs[2 * b:], cfg.margin)
            if not np.isfinite(res.total):
                raise TrainingDiverged(f"phase I loss became non-finite at epoch {epoch}, batch {s // bs}")
            total += res.total
            dvec = np.concatenate([res.grad_anchor, res.grad_positive, res.grad_negative])
            grads = enc.encode_backward(dvec, params, cfg, cache)
            params, state = nn.adam_step(params, {k: grads[k] for k in keys}, state)
        training_log.add(epoch, "train", "triplet_loss", total / len(triplets))
        current = score(params)
        if not np.isfinite(current):
            raise TrainingDiverged(f"phase I validation loss became non-finite at epoch {epoch}")
        training_log.add(epoch, "valid", "triplet_loss", current)
        if valid is not None and len(valid):
            training_log.add(epoch, "valid", "cosine_gap", cosine_gap(params, cfg, valid))
        if current < best:
            best, best_params, since_best = current, _copy(params), 0
        else:
            since_best += 1
            if since_best >= cfg.phase1_patience > 0:
                log.info("phase I early stop at epoch %d", epoch)
                break
    return best_params


# ---------------------------------------------------------------------------
# phase II
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Model:
    params: dict
    word_vocab: WordVocab
    char_vocab: CharVocab
    label_names: list
    config: Config

    def __post_init__(self):
        shapes = enc.param_shapes(self.config, len(self.word_vocab), len(self.char_vocab),
                                  len(self.label_names))
        if set(shapes) != set(self.params):
            raise ValueError(f"parameter set {sorted(self.params)} does not match the config")
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: shape {self.params[name].shape} != expected {shape}")
            self.params[name].setflags(write=False)

    @property
    def n_classes(self) -> int:
        return len(self.label_names)


def class_probs(params, cfg, dataset, batch_size=256):
    out = []
    for s in range(0, len(dataset), batch_size):
        idx = np.arange(s, min(s + batch_size, len(dataset)))
        vec, _ = enc.encode_batch(params, cfg, *_batch(dataset, idx))
        out.append(nn.softmax(enc.classifier_logits(params, vec)))
    return np.concatenate(out)


def split_metrics(params, cfg, dataset) -> tuple[float, float]:
    """(accuracy, mean cross-entropy over samples with a known label)."""
    if len(dataset) == 0:
        return math.nan, math.nan
    probs = class_probs(params, cfg, dataset)
    acc = float((np.argmax(probs, axis=1) == dataset.labels).mean())
    known = dataset.labels >= 0
    loss = float(nn.cross_entropy(probs[known], dataset.labels[known])[0].mean()) if known.any() else math.nan
    return acc, loss


def accuracy(params, cfg, dataset) -> float:
    return split_metrics(params, cfg, dataset)[0]


def train_phase2(train: LabeledDataset, valid: LabeledDataset | None, cfg: Config, encoder_params: dict,
                 training_log: TrainingLog | None = None) -> dict:
    """End-to-end classifier fine-tuning with early stopping on validation accuracy."""
    training_log = training_log if training_log is not None else TrainingLog()
    params = _copy(encoder_params)
    params.update(enc.init_classifier(cfg, train.n_classes))
    if np.any(train.labels < 0):
        raise ValueError("training labels must all be known intents")
    has_valid = valid is not None and len(valid) > 0
    rng = np.random.default_rng([cfg.seed, 20])
    state = _adam(cfg)
    keys = enc.CLASSIFIER_KEYS + ([] if cfg.freeze_encoder else enc.encoder_keys(cfg))
    # ranked by accuracy, ties broken by lower cross-entropy
    best, best_params, since_best = (-1.0, -math.inf), _copy(params), 0
    bs = cfg.phase2_batch_size
    for epoch in range(1, cfg.phase2_epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for s in range(0, len(order), bs):
            idx = order[s:s + bs]
            probs, cache = enc.classify_batch(params, cfg, *_batch(train, idx), training=True, rng=rng)
            loss, dprobs = nn.cross_entropy(probs, train.labels[idx])
            if not np.all(np.isfinite(loss)):
                raise TrainingDiverged(f"phase II loss became non-finite at epoch {epoch}")
            total += float(loss.sum())
            grads = enc.classify_backward(dprobs / len(idx), params, cfg, cache,
                                          train_encoder=not cfg.freeze_encoder)
            params, state = nn.adam_step(params, {k: grads[k] for k in keys}, state)
        training_log.add(epoch, "train", "cross_entropy", total / len(train))
        train_acc, train_loss = split_metrics(params, cfg, train)
        training_log.add(epoch, "train", "accuracy", train_acc)
        acc, loss = split_metrics(params, cfg, valid) if has_valid else (train_acc, train_loss)
        if has_valid:
            training_log.add(epoch, "valid", "accuracy", acc)
            training_log.add(epoch, "valid", "cross_entropy", loss)
        current = (acc, -loss if np.isfinite(loss) else -math.inf)
        if current > best:
            best, best_params, since_best = current, _copy(params), 0
        else:
            since_best += 1
            if since_best >= cfg.phase2_patience > 0:
                log.info("phase II early stop at epoch %d", epoch)
                break
    return best_params


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

def initial_encoder(corpus, cfg: Config, vectors=None) -> tuple[dict, float]:
    """Encoder init for the configured embedding mode; returns (params, coverage)."""
    coverage = math.nan
    word_table = None
    if cfg.embeddings in ("glove", "fasttext"):
        table = build_word_table(corpus.word_vocab, InitMode.pretrained(cfg.embedding_path),
                                 dim=cfg.word_dim, seed=cfg.seed, scale=cfg.init_scale,
                                 dtype=cfg.dtype, vectors=vectors)
        word_table, coverage = table.matrix, table.coverage
        log.info("pretrained vectors cover %.2f%% of the vocabulary", 100 * coverage)
    params = enc.init_encoder(cfg, len(corpus.word_vocab), len(corpus.char_vocab), word_table)
    return params, coverage


def train(corpus, cfg: Config, training_log: TrainingLog | None = None, vectors=None) -> Model:
    """Run the configured pipeline (optional phase I, then phase II) on a loaded corpus."""
    training_log = training_log if training_log is not None else TrainingLog()
    train_split, valid = corpus["train"], corpus.splits.get("valid")
    params, _ = initial_encoder(corpus, cfg, vectors)
    if cfg.phases == 2:
        params = train_phase1(train_split, valid, cfg, params, training_log)
    params = train_phase2(train_split, valid, cfg, params, training_log)
    return make_model(params, corpus.word_vocab, corpus.char_vocab, corpus.label_names, cfg)


def make_model(params, word_vocab, char_vocab, label_names, cfg) -> Model:
    params = {k: np.array(v, dtype=np.float32 if cfg.precision == "f32" else np.float64)
              for k, v in params.items()}
    return Model(params, word_vocab, char_vocab, list(label_names), cfg)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def predict_proba(model: Model, utterances) -> np.ndarray:
    """(N, C) class probabilities for raw utterance strings."""
    cfg = model.config
    token_lists = [tokenize(u) for u in utterances]
    for u, toks in zip(utterances, token_lists):
        if not toks:
            raise ValueError(f"empty utterance: {u!r}")
    w, c, n = encode_batch(token_lists, model.word_vocab, model.char_vocab, cfg.t_max, cfg.l_max)
    vec, _ = enc.encode_batch(model.params, cfg, w, c, n)
    return nn.softmax(enc.classifier_logits(model.params, vec))


def predict(model: Model, text: str) -> tuple[str, np.ndarray]:
    probs = predict_proba(model, [text])[0]
    return model.label_names[int(np.argmax(probs))], probs
