"""Shared sentence encoder and the classifier head.

Parameters live in a flat ``dict[str, ndarray]``. Encoder keys::

    char_emb            (|chars|, char_dim)
    conv{i}_w, conv{i}_b (k_i, char_dim, F), (F,)   one block per kernel size
    word_emb            (|words|, word_dim)         absent in char-only mode
    lstm_{fw,bw}_W/U/b  (D, 4H), (H, 4H), (4H,)

Classifier keys are ``dense1_w/b`` and ``dense2_w/b``.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .embeddings import build_char_table, uniform_table
from .text import PAD

DIRECTIONS = ("fw", "bw")


def conv_keys(cfg):
    return [(f"conv{i + 1}_w", f"conv{i + 1}_b") for i in range(len(cfg.conv_kernels))]


def encoder_keys(cfg) -> list[str]:
    keys = ["char_emb"]
    for w, b in conv_keys(cfg):
        keys += [w, b]
    if cfg.uses_word_embeddings:
        keys.append("word_emb")
    for d in DIRECTIONS:
        keys += [f"lstm_{d}_W", f"lstm_{d}_U", f"lstm_{d}_b"]
    return keys


CLASSIFIER_KEYS = ["dense1_w", "dense1_b", "dense2_w", "dense2_b"]


def param_shapes(cfg, n_words, n_chars, n_classes=None) -> dict[str, tuple]:
    H, D = cfg.lstm_units, cfg.word_feature_dim
    shapes = {"char_emb": (n_chars, cfg.char_dim)}
    for (w, b), k in zip(conv_keys(cfg), cfg.conv_kernels):
        shapes[w] = (k, cfg.char_dim, cfg.conv_filters)
        shapes[b] = (cfg.conv_filters,)
    if cfg.uses_word_embeddings:
        shapes["word_emb"] = (n_words, cfg.word_dim)
    for d in DIRECTIONS:
        shapes[f"lstm_{d}_W"] = (D, 4 * H)
        shapes[f"lstm_{d}_U"] = (H, 4 * H)
        shapes[f"lstm_{d}_b"] = (4 * H,)
    if n_classes is not None:
        shapes["dense1_w"] = (cfg.sentence_dim, cfg.hidden_units)
        shapes["dense1_b"] = (cfg.hidden_units,)
        shapes["dense2_w"] = (cfg.hidden_units, n_classes)
        shapes["dense2_b"] = (n_classes,)
    return shapes


def init_encoder(cfg, n_words, n_chars, word_table=None, seed=None) -> dict:
    """Fresh encoder parameters. ``word_table`` overrides the random word rows."""
    seed = cfg.seed if seed is None else seed
    dtype = cfg.dtype
    rng = np.random.default_rng([seed, 2])
    params = {"char_emb": build_char_table(range(n_chars), cfg.char_dim, seed=seed + 1,
                                           scale=cfg.init_scale, dtype=dtype)}
    for (w, b), k in zip(conv_keys(cfg), cfg.conv_kernels):
        fan_in, fan_out = k * cfg.char_dim, k * cfg.conv_filters
        params[w] = nn.glorot_uniform(rng, fan_in, fan_out, (k, cfg.char_dim, cfg.conv_filters), dtype)
        params[b] = np.zeros(cfg.conv_filters, dtype=dtype)
    if cfg.uses_word_embeddings:
        if word_table is None:
            word_table = uniform_table(np.random.default_rng(seed), n_words, cfg.word_dim,
                                       cfg.init_scale, dtype)
        if word_table.shape != (n_words, cfg.word_dim):
            raise ValueError(f"word table shape {word_table.shape} != {(n_words, cfg.word_dim)}")
        params["word_emb"] = word_table.astype(dtype)
    H, D = cfg.lstm_units, cfg.word_feature_dim
    for d in DIRECTIONS:
        params[f"lstm_{d}_W"] = nn.glorot_uniform(rng, D, 4 * H, (D, 4 * H), dtype)
        params[f"lstm_{d}_U"] = nn.glorot_uniform(rng, H, 4 * H, (H, 4 * H), dtype)
        bias = np.zeros(4 * H, dtype=dtype)
        bias[H:2 * H] = 1.0  # forget gate
        params[f"lstm_{d}_b"] = bias
    return params


def init_classifier(cfg, n_classes, seed=None) -> dict:
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng([seed, 3])
    dtype, S, M = cfg.dtype, cfg.sentence_dim, cfg.hidden_units
    return {
        "dense1_w": nn.glorot_uniform(rng, S, M, (S, M), dtype),
        "dense1_b": np.zeros(M, dtype=dtype),
        "dense2_w": nn.glorot_uniform(rng, M, n_classes, (M, n_classes), dtype),
        "dense2_b": np.zeros(n_classes, dtype=dtype),
    }


# ---------------------------------------------------------------------------
# char features
# ---------------------------------------------------------------------------

def char_features_forward(params, cfg, chars):
    """Per-word char-CNN features.

    chars: (N, L) char ids of N words, left-aligned, PAD-filled.
    Returns (N, F * n_kernels). Pooling only sees windows lying fully inside
    the word; a word shorter than a kernel gets zeros from that block.
    """
    char_len = (chars != PAD).sum(axis=1)
    if np.any(char_len == 0):
        raise ValueError("char features requested for an all-PAD word")
    kmax = max(cfg.conv_kernels)
    Lc = min(chars.shape[1], max(int(char_len.max()), kmax))
    chars = chars[:, :Lc]
    emb = params["char_emb"][chars]
    pooled, caches = [], []
    for (wk, bk), k in zip(conv_keys(cfg), cfg.conv_kernels):
        out, conv_cache = nn.conv1d_forward(emb, params[wk], params[bk])
        valid = np.arange(Lc - k + 1)[None, :] + k <= char_len[:, None]
        p, pool_cache = nn.maxpool_forward(out, valid)
        pooled.append(p)
        caches.append((conv_cache, pool_cache))
    return np.concatenate(pooled, axis=1), (chars, caches)


def char_features_backward(dfeat, params, cfg, cache, grads):
    chars, caches = cache
    F = cfg.conv_filters
    demb = None
    for i, ((wk, bk), (conv_cache, pool_cache)) in enumerate(zip(conv_keys(cfg), caches)):
        dout = nn.maxpool_backward(dfeat[:, i * F:(i + 1) * F], pool_cache)
        dx, dw, db = nn.conv1d_backward(dout, conv_cache)
        grads[wk] = grads.get(wk, 0) + dw
        grads[bk] = grads.get(bk, 0) + db
        demb = dx if demb is None else demb + dx
    dtable = np.zeros_like(params["char_emb"])
    np.add.at(dtable, chars.reshape(-1), demb.reshape(-1, demb.shape[-1]))
    grads["char_emb"] = grads.get("char_emb", 0) + dtable


def char_features(word_char_ids, params, cfg):
    """Char-CNN feature vector of a single word (L_max ids)."""
    feat, _ = char_features_forward(params, cfg, np.asarray(word_char_ids)[None, :])
    return feat[0]


def word_feature(word_id, word_char_ids, params, cfg):
    """concat(word embedding, CNN_1 pooled, CNN_2 pooled, ...) for one word."""
    parts = []
    if cfg.uses_word_embeddings:
        parts.append(params["word_emb"][word_id])
    parts.append(char_features(word_char_ids, params, cfg))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# sentence encoder
# ---------------------------------------------------------------------------

def encode_batch(params, cfg, word_ids, char_ids, lengths, training=False, rng=None):
    """Encode a padded batch into (B, 2H) sentence vectors.

    Returns (vectors, cache). Dropout masks are drawn from ``rng`` only when
    ``training`` is set.
    """
    lengths = np.asarray(lengths)
    if np.any(lengths < 1):
        raise ValueError("every sentence needs at least one token")
    B = len(lengths)
    T = int(lengths.max())
    word_ids = np.asarray(word_ids)[:, :T]
    char_ids = np.asarray(char_ids)[:, :T]
    valid = np.arange(T)[None, :] < lengths[:, None]
    sel = np.flatnonzero(valid)

    char_feat, char_cache = char_features_forward(
        params, cfg, char_ids.reshape(B * T, -1)[sel]
    )
    Dw = cfg.word_dim if cfg.uses_word_embeddings else 0
    D = cfg.word_feature_dim
    dtype = params["lstm_fw_W"].dtype
    feat = np.zeros((B * T, D), dtype=dtype)
    if Dw:
        feat[sel, :Dw] = params["word_emb"][word_ids.reshape(-1)[sel]]
    feat[sel, Dw:] = char_feat
    feat = feat.reshape(B, T, D)

    in_mask = rec_masks = None
    if training:
        if rng is None:
            raise ValueError("training mode needs an rng for dropout")
        in_mask = nn.dropout_mask(rng, feat.shape, cfg.dropout, dtype)
        H = cfg.lstm_units
        rec_masks = tuple(nn.dropout_mask(rng, (B, H), cfg.recurrent_dropout, dtype) for _ in DIRECTIONS)
        feat = feat * in_mask
    fw = tuple(params[f"lstm_fw_{n}"] for n in "WUb")
    bw = tuple(params[f"lstm_bw_{n}"] for n in "WUb")
    (hf, hb), lstm_cache = nn.bilstm_forward(feat, lengths, fw, bw, rec_masks or (None, None))
    vec = np.concatenate([hf, hb], axis=1)
    return vec, (word_ids, sel, char_cache, in_mask, lstm_cache, T)


def encode_backward(dvec, params, cfg, cache) -> dict:
    """Gradients of ``sum(dvec * vectors)`` w.r.t. every encoder parameter."""
    word_ids, sel, char_cache, in_mask, lstm_cache, T = cache
    B = dvec.shape[0]
    H = cfg.lstm_units
    dfeat, gf, gb = nn.bilstm_backward(dvec[:, :H], dvec[:, H:], lstm_cache)
    grads = {}
    for d, g in zip(DIRECTIONS, (gf, gb)):
        for n, arr in zip("WUb", g):
            grads[f"lstm_{d}_{n}"] = arr
    if in_mask is not None:
        dfeat = dfeat * in_mask
    dfeat = dfeat.reshape(B * T, -1)[sel]
    Dw = cfg.word_dim if cfg.uses_word_embeddings else 0
    if Dw:
        dtable = np.zeros_like(params["word_emb"])
        np.add.at(dtable, word_ids.reshape(-1)[sel], dfeat[:, :Dw])
        grads["word_emb"] = dtable
    char_features_backward(dfeat[:, Dw:], params, cfg, char_cache, grads)
    for name, g in grads.items():
        nn.check_finite(f"gradient of {name}", g)
    return grads


def encode(sentence, params, cfg, training=False, rng=None):
    """Sentence vector for a single EncodedSentence."""
    vec, _ = encode_batch(
        params, cfg, sentence.word_ids[None], sentence.char_ids[None],
        np.array([sentence.true_length]), training, rng,
    )
    return vec[0]


# ---------------------------------------------------------------------------
# classifier head
# ---------------------------------------------------------------------------

def classifier_forward(params, vec):
    hidden, c1 = nn.dense_forward(vec, params["dense1_w"], params["dense1_b"], "relu")
    probs, c2 = nn.dense_forward(hidden, params["dense2_w"], params["dense2_b"], "softmax")
    return probs, (c1, c2)


def classifier_logits(params, vec):
    hidden = np.maximum(vec @ params["dense1_w"] + params["dense1_b"], 0.0)
    return hidden @ params["dense2_w"] + params["dense2_b"]


def classifier_backward(dprobs, cache):
    c1, c2 = cache
    dhidden, dw2, db2 = nn.dense_backward(dprobs, c2)
    dvec, dw1, db1 = nn.dense_backward(dhidden, c1)
    return dvec, {"dense1_w": dw1, "dense1_b": db1, "dense2_w": dw2, "dense2_b": db2}


def classify_batch(params, cfg, word_ids, char_ids, lengths, training=False, rng=None):
    vec, enc_cache = encode_batch(params, cfg, word_ids, char_ids, lengths, training, rng)
    probs, cls_cache = classifier_forward(params, vec)
    return probs, (enc_cache, cls_cache)


def classify_backward(dprobs, params, cfg, cache, train_encoder=True) -> dict:
    enc_cache, cls_cache = cache
    dvec, grads = classifier_backward(dprobs, cls_cache)
    if train_encoder:
        grads.update(encode_backward(dvec, params, cfg, enc_cache))
    return grads
