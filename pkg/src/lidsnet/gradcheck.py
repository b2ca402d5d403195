"""Finite-difference verification of every backward pass on random small instances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from . import nn
from .config import Config
from .trainer import triplet_loss

TOLERANCE = 1e-4
NOISE = {"dense1": 0.5, "dense2": 0.5, "char": 1.0, "word": 1.0, "default": 0.3}


def _projection(rng, shape):
    return rng.normal(size=shape)


def check_conv1d(rng, fault=False):
    L, D, k, F = rng.integers(3, 8), rng.integers(1, 6), rng.integers(1, 4), rng.integers(1, 5)
    p = {"x": rng.normal(size=(L, D)), "w": rng.normal(size=(k, D, F)), "b": rng.normal(size=F) * 0.1}
    proj = _projection(rng, (L - k + 1, F))
    out, cache = nn.conv1d_forward(p["x"], p["w"], p["b"])
    dx, dw, db = nn.conv1d_backward(proj, cache)
    grads = {"x": dx, "w": dw * (2 if fault else 1), "b": db}
    return nn.grad_check(lambda: float((nn.conv1d_forward(p["x"], p["w"], p["b"])[0] * proj).sum()), p, grads)


def check_maxpool(rng, fault=False):
    L, F = rng.integers(1, 7), rng.integers(1, 17)
    p = {"x": rng.normal(size=(L, F))}
    proj = _projection(rng, F)
    _, cache = nn.maxpool_forward(p["x"])
    grads = {"x": nn.maxpool_backward(proj, cache) * (2 if fault else 1)}
    return nn.grad_check(lambda: float((nn.maxpool_forward(p["x"])[0] * proj).sum()), p, grads)


def _lstm_params(rng, D, H, scale=0.5):
    return {
        f"{d}_{n}": rng.normal(size=s) * scale
        for d in ("fw", "bw")
        for n, s in (("W", (D, 4 * H)), ("U", (H, 4 * H)), ("b", (4 * H,)))
    }


def check_bilstm(rng, fault=False):
    B, T, D, H = rng.integers(1, 4), rng.integers(1, 6), rng.integers(1, 11), rng.integers(1, 5)
    p = _lstm_params(rng, D, H)
    p["x"] = rng.normal(size=(B, T, D))
    lengths = rng.integers(1, T + 1, B)
    masks = tuple(nn.dropout_mask(rng, (B, H), 0.2, np.float64) for _ in range(2))
    pf, pb = _projection(rng, (B, H)), _projection(rng, (B, H))

    def run():
        fw = (p["fw_W"], p["fw_U"], p["fw_b"])
        bw = (p["bw_W"], p["bw_U"], p["bw_b"])
        return nn.bilstm_forward(p["x"], lengths, fw, bw, masks)

    (hf, hb), cache = run()
    dx, gf, gb = nn.bilstm_backward(pf, pb, cache)
    grads = {"x": dx}
    for d, g in (("fw", gf), ("bw", gb)):
        for n, arr in zip("WUb", g):
            grads[f"{d}_{n}"] = arr
    if fault:
        grads["fw_U"] = grads["fw_U"] * 2

    def loss():
        (hf, hb), _ = run()
        return float((hf * pf).sum() + (hb * pb).sum())

    return nn.grad_check(loss, p, grads)


def check_dense(rng, fault=False):
    B, Din, Dout = rng.integers(1, 4), rng.integers(1, 8), rng.integers(1, 8)
    act = ("relu", "none", "softmax")[rng.integers(0, 3)]
    p = {"x": rng.normal(size=(B, Din)), "w": rng.normal(size=(Din, Dout)), "b": rng.normal(size=Dout)}
    proj = _projection(rng, (B, Dout))
    _, cache = nn.dense_forward(p["x"], p["w"], p["b"], act)
    dx, dw, db = nn.dense_backward(proj, cache)
    grads = {"x": dx, "w": dw * (2 if fault else 1), "b": db}
    return nn.grad_check(lambda: float((nn.dense_forward(p["x"], p["w"], p["b"], act)[0] * proj).sum()), p, grads)


def check_softmax_xent(rng, fault=False):
    B, Din, C = rng.integers(1, 5), rng.integers(1, 8), rng.integers(2, 8)
    p = {"x": rng.normal(size=(B, Din)), "w": rng.normal(size=(Din, C)), "b": rng.normal(size=C)}
    labels = rng.integers(0, C, B)

    def loss():
        probs, _ = nn.dense_forward(p["x"], p["w"], p["b"], "softmax")
        return float(nn.cross_entropy(probs, labels)[0].sum())

    probs, cache = nn.dense_forward(p["x"], p["w"], p["b"], "softmax")
    _, dprobs = nn.cross_entropy(probs, labels)
    dx, dw, db = nn.dense_backward(dprobs, cache)
    grads = {"x": dx, "w": dw * (2 if fault else 1), "b": db}
    return nn.grad_check(loss, p, grads)


def check_triplet(rng, fault=False):
    B, S = rng.integers(1, 5), rng.integers(2, 9)
    p = {k: rng.normal(size=(B, S)) for k in "apn"}
    margin = 2.0  # keeps every hinge active so all three inputs receive gradient
    res = triplet_loss(p["a"], p["p"], p["n"], margin)
    grads = {"a": res.grad_anchor * (2 if fault else 1), "p": res.grad_positive, "n": res.grad_negative}
    return nn.grad_check(lambda: triplet_loss(p["a"], p["p"], p["n"], margin).total, p, grads)


def tiny_config(rng, **overrides) -> Config:
    base = dict(
        embeddings="random", precision="f64", char_dim=int(rng.integers(2, 5)),
        conv_filters=int(rng.integers(1, 4)), word_dim=int(rng.integers(2, 6)),
        lstm_units=int(rng.integers(1, 4)), hidden_units=int(rng.integers(2, 6)), t_max=6, l_max=7,
    )
    base.update(overrides)
    return Config(**base)


def random_batch(rng, cfg, B, n_words, n_chars):
    word_ids = rng.integers(1, n_words, (B, cfg.t_max))
    lengths = rng.integers(1, cfg.t_max + 1, B)
    char_ids = np.zeros((B, cfg.t_max, cfg.l_max), dtype=np.int64)
    for b in range(B):
        for t in range(cfg.t_max):
            n = rng.integers(1, cfg.l_max + 1)
            char_ids[b, t, :n] = rng.integers(1, n_chars, n)
    return word_ids, char_ids, lengths


KINK_MARGIN = 1e-4
SATURATION = 1e-3  # smallest gate derivative (or class probability) allowed


def ill_conditioned(cfg, probs, cache, margin=KINK_MARGIN) -> bool:
    """True if the instance is badly conditioned for central differences.

    That is: a ReLU input or a max-pool top-2 gap lies within ``margin`` of a
    switch (the difference then mixes two one-sided slopes), or an LSTM gate is
    saturated on a live step, or the softmax is saturated (gradients through
    either fall toward the ~1e-11 round-off floor). Such instances are redrawn rather than checked. The test
    only looks at the forward pass, never at the gradients being verified.
    """
    if np.any(probs < SATURATION) or np.any(probs > 1 - SATURATION):
        return True
    enc_cache, (dense1_cache, _) = cache
    chars, caches = enc_cache[2]
    char_len = (chars != 0).sum(axis=1)
    for k, ((_, _, pre), _) in zip(cfg.conv_kernels, caches):
        valid = np.arange(pre.shape[1])[None, :] + k <= char_len[:, None]
        if np.any(np.abs(pre[valid]) < margin):
            return True
        act = np.where(valid[..., None], np.maximum(pre, 0.0), -np.inf)
        if act.shape[1] > 1:
            top2 = np.sort(act, axis=1)[:, -2:, :]
            live = np.isfinite(top2[:, 0]) & (top2[:, 1] > 0)
            if np.any(top2[:, 1][live] - top2[:, 0][live] < margin):
                return True
    for _, _, _, _, steps in enc_cache[4]:
        for _, m, _, _, i, f, g, o, tc in steps:
            live = m[:, 0] > 0
            slopes = [s * (1 - s) for s in (i, f, o)] + [1 - g * g, 1 - tc * tc]
            if any(np.any(d[live] < SATURATION) for d in slopes):
                return True
    z = dense1_cache[2]
    return bool(np.any(np.abs(z) < margin))


RESOLVABLE = 1e-6  # smallest nonzero derivative a step-1e-5 float64 difference resolves to 1e-4
STRUCTURAL_ZERO = 1e-13  # differences this small mean the loss does not depend on the entry
MAX_REDRAWS = 200


class IllConditionedError(RuntimeError):
    pass


def unresolvable(numeric: dict) -> bool:
    """True if some finite difference lies between round-off noise and ``RESOLVABLE``.

    Central differences in float64 carry ~1e-11 absolute round-off, which the
    1e-8 floor of the relative error cannot absorb for entries that small. The
    test reads only the finite differences, never the analytic gradient.
    """
    return any(np.any((np.abs(n) >= STRUCTURAL_ZERO) & (np.abs(n) < RESOLVABLE)) for n in numeric.values())


def check_pipeline(rng, fault=False, char_only=False):
    """Encoder + classifier + cross-entropy, in training mode with fixed dropout masks."""
    for _ in range(MAX_REDRAWS):
        cfg = tiny_config(rng, embeddings="char-only" if char_only else "random")
        n_words, n_chars, C, B = 7, 9, int(rng.integers(2, 5)), int(rng.integers(1, 4))
        p = enc.init_encoder(cfg, n_words, n_chars, seed=int(rng.integers(1 << 30)))
        p.update(enc.init_classifier(cfg, C, seed=int(rng.integers(1 << 30))))
        # unit-scale inputs keep gradients well above finite-difference round-off
        for k in p:
            scale = NOISE.get(k.split("_")[0], NOISE["default"])
            p[k] = p[k] + rng.normal(0, scale, p[k].shape)
        batch = random_batch(rng, cfg, B, n_words, n_chars)
        labels = rng.integers(0, C, B)
        drop_seed = int(rng.integers(1 << 30))

        def run():
            return enc.classify_batch(p, cfg, *batch, training=True, rng=np.random.default_rng(drop_seed))

        def loss():
            return float(nn.cross_entropy(run()[0], labels)[0].sum())

        probs, cache = run()
        if ill_conditioned(cfg, probs, cache):
            continue
        numeric = {k: nn.numeric_grad(loss, v) for k, v in p.items()}
        if unresolvable(numeric):
            continue
        _, dprobs = nn.cross_entropy(probs, labels)
        grads = enc.classify_backward(dprobs, p, cfg, cache)
        if fault:
            grads["conv1_w"] = grads["conv1_w"] * 2
        return max(float(nn.relative_error(grads[k], numeric[k]).max()) for k in p)
    raise IllConditionedError(f"no well-conditioned pipeline instance in {MAX_REDRAWS} draws")


CHECKS = {
    "conv1d": check_conv1d,
    "maxpool": check_maxpool,
    "bilstm": check_bilstm,
    "dense": check_dense,
    "softmax_cross_entropy": check_softmax_xent,
    "triplet_loss": check_triplet,
    "encoder_classifier": check_pipeline,
}


@dataclass
class CheckResult:
    layer: str
    instances: int
    max_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def run_checks(instances=20, seed=0, fault=None, layers=None) -> list[CheckResult]:
    """Run each layer check on ``instances`` random problems.

    ``fault`` names a layer whose analytic gradient is deliberately doubled.
    """
    results = []
    for name, fn in CHECKS.items():
        if layers is not None and name not in layers:
            continue
        rng = np.random.default_rng([seed, len(name)])
        worst = max(fn(rng, fault=(name == fault)) for _ in range(instances))
        results.append(CheckResult(name, instances, worst))
    return results


def format_table(results) -> str:
    lines = [f"{'layer':<24}{'instances':>10}{'max_rel_err':>14}  status"]
    for r in results:
        lines.append(f"{r.layer:<24}{r.instances:>10}{r.max_error:>14.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
