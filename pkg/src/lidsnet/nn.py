"""Forward/backward kernels for the layers used by the encoder and classifier.

Every layer is a pair of plain functions: ``*_forward`` returns the output and a
cache, ``*_backward`` consumes the upstream gradient and that cache. All kernels
accept arbitrary leading batch dimensions unless noted otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {name}")


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# conv1d + ReLU
# ---------------------------------------------------------------------------

def conv1d_forward(x, w, b):
    """Valid 1D convolution followed by ReLU.

    x: (..., L, D_in), w: (k, D_in, F), b: (F,) -> (..., L - k + 1, F)
    """
    k, d_in, _ = w.shape
    L = x.shape[-2]
    if x.shape[-1] != d_in:
        raise ValueError(f"conv1d: input depth {x.shape[-1]} != kernel depth {d_in}")
    if L < k:
        raise ValueError(f"conv1d: sequence length {L} shorter than kernel size {k}")
    n_out = L - k + 1
    pre = b + sum(x[..., j:j + n_out, :] @ w[j] for j in range(k))
    out = np.maximum(pre, 0.0)
    return out, (x, w, pre)


def conv1d_backward(dout, cache):
    x, w, pre = cache
    k = w.shape[0]
    n_out = pre.shape[-2]
    dpre = dout * (pre > 0)
    lead = dpre.reshape(-1, dpre.shape[-1])
    dx = np.zeros_like(x)
    dw = np.empty_like(w)
    for j in range(k):
        xs = x[..., j:j + n_out, :]
        dw[j] = xs.reshape(-1, xs.shape[-1]).T @ lead
        dx[..., j:j + n_out, :] += dpre @ w[j].T
    db = lead.sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# max-pool over time
# ---------------------------------------------------------------------------

def maxpool_forward(x, valid=None):
    """Max over the time axis of (..., L, F).

    ``valid`` is an optional boolean (..., L) mask; a row with no valid position
    pools to zero and passes no gradient. Ties go to the first maximal index.
    """
    L = x.shape[-2]
    if L == 0:
        raise ValueError("maxpool over an empty sequence")
    if valid is None:
        idx = np.argmax(x, axis=-2)
        out = np.take_along_axis(x, idx[..., None, :], axis=-2)[..., 0, :]
        return out, (x.shape, idx, None)
    masked = np.where(valid[..., None], x, -np.inf)
    idx = np.argmax(masked, axis=-2)
    out = np.take_along_axis(masked, idx[..., None, :], axis=-2)[..., 0, :]
    empty = ~valid.any(axis=-1)
    out[empty] = 0.0
    return out, (x.shape, idx, empty)


def maxpool_backward(dout, cache):
    shape, idx, empty = cache
    dout = dout if empty is None else np.where(empty[..., None], 0.0, dout)
    dx = np.zeros(shape, dtype=dout.dtype)
    np.put_along_axis(dx, idx[..., None, :], dout[..., None, :], axis=-2)
    return dx


# ---------------------------------------------------------------------------
# LSTM (one direction) over a length-masked batch
# ---------------------------------------------------------------------------

def lstm_forward(x, lengths, W, U, b, reverse=False, rec_mask=None):
    """Run one LSTM direction over a padded batch.

    x: (B, T, D); lengths: (B,) true lengths; W: (D, 4H); U: (H, 4H); b: (4H,).
    Gate order is input, forget, candidate, output. Positions t >= length never
    touch the state, so the forward direction ends at h(length) and the reverse
    direction ends at h(1). ``rec_mask`` (B, H) multiplies the hidden state fed
    into the recurrent kernel at every step (variational recurrent dropout).
    Returns the final hidden state (B, H).
    """
    B, T, _ = x.shape
    H = U.shape[0]
    lengths = np.asarray(lengths)
    if np.any(lengths < 1) or np.any(lengths > T):
        raise ValueError("lstm: every true length must lie in [1, T]")
    xw = x @ W + b
    h = np.zeros((B, H), dtype=x.dtype)
    c = np.zeros((B, H), dtype=x.dtype)
    steps = []
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        m = (t < lengths)[:, None].astype(x.dtype)
        h_in = h if rec_mask is None else h * rec_mask
        z = xw[:, t] + h_in @ U
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        steps.append((t, m, h_in, c, i, f, g, o, tc))
        c = m * c_new + (1 - m) * c
        h = m * h_new + (1 - m) * h
    return h, (x, W, U, rec_mask, steps)


def lstm_backward(dh, cache):
    x, W, U, rec_mask, steps = cache
    H = U.shape[0]
    dxw = np.zeros(x.shape[:2] + (4 * H,), dtype=x.dtype)
    dU = np.zeros_like(U)
    dc = np.zeros_like(dh)
    for t, m, h_in, c_prev, i, f, g, o, tc in reversed(steps):
        dh_new = m * dh
        dc_new = m * dc + dh_new * o * (1 - tc * tc)
        do = dh_new * tc
        di = dc_new * g
        df = dc_new * c_prev
        dg = dc_new * i
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
        )
        dxw[:, t] = dz
        dU += h_in.T @ dz
        dh_in = dz @ U.T
        if rec_mask is not None:
            dh_in = dh_in * rec_mask
        dh = (1 - m) * dh + dh_in
        dc = (1 - m) * dc + dc_new * f
    dW = np.einsum("btd,btg->dg", x, dxw)
    db = dxw.sum(axis=(0, 1))
    dx = dxw @ W.T
    return dx, dW, dU, db


def bilstm_forward(x, lengths, fw, bw, rec_masks=(None, None)):
    """fw/bw are (W, U, b) triples. Returns (h_forward_final, h_backward_final)."""
    hf, cf = lstm_forward(x, lengths, *fw, reverse=False, rec_mask=rec_masks[0])
    hb, cb = lstm_forward(x, lengths, *bw, reverse=True, rec_mask=rec_masks[1])
    return (hf, hb), (cf, cb)


def bilstm_backward(dhf, dhb, cache):
    cf, cb = cache
    dxf, *gf = lstm_backward(dhf, cf)
    dxb, *gb = lstm_backward(dhb, cb)
    return dxf + dxb, tuple(gf), tuple(gb)


# ---------------------------------------------------------------------------
# dense + activations
# ---------------------------------------------------------------------------

def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def dense_forward(x, w, b, activation="none"):
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"dense: shapes {x.shape} @ {w.shape} + {b.shape} do not agree")
    z = x @ w + b
    if activation == "relu":
        y = np.maximum(z, 0.0)
    elif activation == "softmax":
        y = softmax(z)
    elif activation == "none":
        y = z
    else:
        raise ValueError(f"unknown activation {activation!r}")
    return y, (x, w, z, y, activation)


def dense_backward(dy, cache):
    x, w, z, y, activation = cache
    if activation == "relu":
        dz = dy * (z > 0)
    elif activation == "softmax":
        dz = y * (dy - (dy * y).sum(axis=-1, keepdims=True))
    else:
        dz = dy
    x2 = x.reshape(-1, x.shape[-1])
    dz2 = dz.reshape(-1, dz.shape[-1])
    return dz @ w.T, x2.T @ dz2, dz2.sum(axis=0)


PROB_FLOOR = 1e-12


def cross_entropy(probs, labels):
    """Per-sample ``-log p[label]`` and its gradient w.r.t. ``probs``.

    probs: (..., C); labels: integer array of the leading shape.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    C = probs.shape[-1]
    if np.any(labels >= C) or np.any(labels < 0):
        raise ValueError(f"label out of range for {C} classes")
    picked = np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]
    clipped = np.maximum(picked, PROB_FLOOR)
    loss = -np.log(clipped)
    grad = np.zeros_like(probs)
    np.put_along_axis(grad, labels[..., None], (-(picked >= PROB_FLOOR).astype(probs.dtype) / clipped)[..., None], axis=-1)
    return loss, grad


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

def dropout_mask(rng: np.random.Generator, shape, p_drop: float, dtype):
    """Inverted-dropout mask: kept entries scaled by 1/p_keep, dropped entries zero."""
    if p_drop <= 0:
        return np.ones(shape, dtype=dtype)
    keep = 1.0 - p_drop
    return ((rng.random(shape) < keep) / keep).astype(dtype)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """Bias-corrected Adam update. Returns new (params, state); inputs are untouched."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params, new_m, new_v = dict(params), dict(state.m), dict(state.v)
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * (g * g)
        step = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.epsilon)
        new_params[name] = (p - step).astype(p.dtype)
        new_m[name] = m.astype(p.dtype)
        new_v[name] = v.astype(p.dtype)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.epsilon, t, new_m, new_v)
    return new_params, new_state


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def numeric_grad(loss_fn, arr, step=1e-5, indices=None):
    """Central differences of ``loss_fn()`` w.r.t. entries of ``arr`` (perturbed in place)."""
    flat = arr.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(flat.size)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        out[i] = (up - down) / (2 * step)
    return out.reshape(arr.shape)


def grad_check(loss_fn, params: dict, grads: dict, step=1e-5, max_entries=None, rng=None):
    """Max relative error between analytic ``grads`` and central differences.

    ``loss_fn()`` must read the arrays in ``params`` (which are perturbed in
    place and restored). With ``max_entries`` only a random subset of each
    tensor is probed.
    """
    worst = 0.0
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {arr.dtype}")
        indices = None
        if max_entries is not None and arr.size > max_entries:
            rng = rng or np.random.default_rng(0)
            indices = rng.choice(arr.size, size=max_entries, replace=False)
        num = numeric_grad(loss_fn, arr, step, indices)
        ana = np.asarray(grads[name], dtype=np.float64)
        if indices is not None:
            err = relative_error(ana.reshape(-1)[indices], num.reshape(-1)[indices])
        else:
            err = relative_error(ana, num)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
