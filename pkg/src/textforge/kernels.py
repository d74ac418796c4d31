"""Pure numpy forward kernels shared by the eager engine and the graph runtime.

The eager ops call these with want_cache=True and keep the cache for their
hand-written backward passes; the exported-graph interpreter calls the same
functions without caches. Sharing the arithmetic is what keeps eager and
exported outputs bit-for-bit identical.

All float work is float32; masks are float32 arrays of {0, 1} where position
j of row i is 1 iff j < length_i (right padding).
"""

import numpy as np

from .errors import EmptyLoss, EmptySequence, ShapeMismatch, TargetOutOfRange

F32 = np.float32
NEG_INF = np.float32(-np.inf)


def sigmoid(x):
    # two-sided form avoids exp overflow warnings for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    if x.size == 0:
        return np.array(x, copy=True)
    shifted = x - x.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=axis, keepdims=True)


def argmax_last(x):
    """Argmax over the last axis; ties take the lowest index."""
    if x.size == 0:
        return np.zeros(x.shape[:-1], dtype=np.int64)
    return np.argmax(x, axis=-1).astype(np.int64)


def linear(x, w, b):
    """x @ w + b over the last axis of x; x may have any leading shape."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch("linear: input dim %d vs weight rows %d" % (x.shape[-1], w.shape[0]))
    if w.shape[1] != b.shape[0]:
        raise ShapeMismatch("linear: weight cols %d vs bias %d" % (w.shape[1], b.shape[0]))
    return x @ w + b


# --- convolution with max-over-time pooling ---

def conv_maxpool(x, filters, mask, want_cache=False):
    """1-D convolution over time followed by max pooling over window positions.

    x [b, t, d], filters [w, d, f], mask [b, t] -> out [b, f].

    Valid windows lie entirely within a row's unmasked prefix. Rows shorter
    than the width get one window, left padded with zeros. Fully masked rows
    are an error.
    """
    b, t, d = x.shape
    w, d2, f = filters.shape
    if d2 != d:
        raise ShapeMismatch("conv: input dim %d vs filter dim %d" % (d, d2))
    if mask.shape != (b, t):
        raise ShapeMismatch("conv: mask shape %s vs (%d, %d)" % (mask.shape, b, t))
    lengths = mask.sum(axis=1).astype(np.int64)
    if b and (lengths == 0).any():
        raise EmptySequence("conv input has a fully masked row")

    # Left pad by w-1 so every window start s in [0, t) is expressible; the
    # window starting at s covers original positions s-w+1 .. s. Valid starts
    # for a row of length L are min(w-1, L-1) .. L-1, which yields the usual
    # L-w+1 windows when L >= w and exactly one zero-padded window otherwise.
    xp = np.concatenate([np.zeros((b, w - 1, d), dtype=F32), x], axis=1) if w > 1 else x
    windows = np.lib.stride_tricks.sliding_window_view(xp, w, axis=1)  # [b, t, d, w]
    flat = np.ascontiguousarray(windows.transpose(0, 1, 3, 2)).reshape(b, t, w * d)
    scores = flat @ filters.reshape(w * d, f)  # [b, t, f]

    starts = np.arange(t, dtype=np.int64)
    lo = np.minimum(w - 1, lengths - 1)
    valid = (starts[None, :] >= lo[:, None]) & (starts[None, :] <= (lengths - 1)[:, None])
    masked = np.where(valid[:, :, None], scores, NEG_INF)
    out = masked.max(axis=1)
    if not want_cache:
        return out, None
    winners = masked.argmax(axis=1)  # [b, f], lowest index on ties
    return out, (flat, winners, filters, w, t)


def conv_maxpool_backward(cache, dout):
    flat, winners, filters, w, t = cache
    b, _, wd = flat.shape
    f = filters.shape[2]
    d = wd // w
    dscores = np.zeros((b, t, f), dtype=F32)
    np.put_along_axis(dscores, winners[:, None, :], dout[:, None, :], axis=1)
    dflat = dscores @ filters.reshape(wd, f).T                    # [b, t, w*d]
    dfilters = np.einsum("btk,btf->kf", flat, dscores).reshape(w, d, f).astype(F32)
    dwin = dflat.reshape(b, t, w, d)
    dxp = np.zeros((b, t + w - 1, d), dtype=F32)
    for j in range(w):
        dxp[:, j:j + t, :] += dwin[:, :, j, :]
    dx = dxp[:, w - 1:, :] if w > 1 else dxp
    return dx, dfilters


# --- LSTM over a whole sequence ---

def lstm_seq(x, w_ih, w_hh, bias, mask, reverse=False, want_cache=False):
    """Unidirectional LSTM returning all hidden states.

    x [b, t, d], w_ih [d, 4h], w_hh [h, 4h], bias [4h], mask [b, t] ->
    hs [b, t, h]. Gate order is input, forget, cell, output. Initial states
    are zero; masked steps copy the previous hidden and cell state.
    """
    b, t, d = x.shape
    if w_ih.shape[0] != d:
        raise ShapeMismatch("lstm: input dim %d vs w_ih rows %d" % (d, w_ih.shape[0]))
    four_h = w_ih.shape[1]
    if four_h % 4 != 0:
        raise ShapeMismatch("lstm: gate dim %d not divisible by 4" % four_h)
    h = four_h // 4
    if w_hh.shape != (h, four_h):
        raise ShapeMismatch("lstm: w_hh shape %s vs (%d, %d)" % (w_hh.shape, h, four_h))
    if bias.shape != (four_h,):
        raise ShapeMismatch("lstm: bias shape %s vs (%d,)" % (bias.shape, four_h))
    if mask.shape != (b, t):
        raise ShapeMismatch("lstm: mask shape %s vs (%d, %d)" % (mask.shape, b, t))

    hs = np.zeros((b, t, h), dtype=F32)
    h_prev = np.zeros((b, h), dtype=F32)
    c_prev = np.zeros((b, h), dtype=F32)
    order = range(t - 1, -1, -1) if reverse else range(t)
    steps = [] if want_cache else None
    for ti in order:
        m = mask[:, ti][:, None]
        z = x[:, ti] @ w_ih + h_prev @ w_hh + bias
        gi = sigmoid(z[:, :h])
        gf = sigmoid(z[:, h:2 * h])
        gg = np.tanh(z[:, 2 * h:3 * h])
        go = sigmoid(z[:, 3 * h:])
        c_new = gf * c_prev + gi * gg
        tanh_c = np.tanh(c_new)
        h_new = go * tanh_c
        h_cur = m * h_new + (1 - m) * h_prev
        c_cur = m * c_new + (1 - m) * c_prev
        hs[:, ti] = h_cur
        if want_cache:
            steps.append((ti, m, gi, gf, gg, go, tanh_c, h_prev, c_prev))
        h_prev, c_prev = h_cur, c_cur
    cache = (x, w_ih, w_hh, steps, h) if want_cache else None
    return hs, cache


def lstm_seq_backward(cache, dhs):
    x, w_ih, w_hh, steps, h = cache
    b, t, d = x.shape
    dx = np.zeros_like(x)
    dw_ih = np.zeros_like(w_ih)
    dw_hh = np.zeros_like(w_hh)
    db = np.zeros(w_ih.shape[1], dtype=F32)
    dh_rec = np.zeros((b, h), dtype=F32)
    dc_rec = np.zeros((b, h), dtype=F32)
    for ti, m, gi, gf, gg, go, tanh_c, h_prev, c_prev in reversed(steps):
        dh_total = dhs[:, ti] + dh_rec
        dh_new = m * dh_total
        dh_skip = (1 - m) * dh_total
        dc_new = m * dc_rec
        dc_skip = (1 - m) * dc_rec
        do = dh_new * tanh_c
        dc_new = dc_new + dh_new * go * (1 - tanh_c * tanh_c)
        df = dc_new * c_prev
        di = dc_new * gg
        dg = dc_new * gi
        dc_prev = dc_new * gf + dc_skip
        dz = np.concatenate([
            di * gi * (1 - gi),
            df * gf * (1 - gf),
            dg * (1 - gg * gg),
            do * go * (1 - go),
        ], axis=1)
        dx[:, ti] = dz @ w_ih.T
        dw_ih += x[:, ti].T @ dz
        dw_hh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dh_rec = dz @ w_hh.T + dh_skip
        dc_rec = dc_prev
    return dx, dw_ih, dw_hh, db


# --- additive self-attention pooling ---

def self_attention(h, w1, w2, mask, want_cache=False):
    """Scores tanh(h @ w1) @ w2, softmax over unmasked positions, weighted sum.

    h [b, t, H], w1 [H, a], w2 [a] -> out [b, H].
    """
    b, t, hd = h.shape
    if w1.shape[0] != hd:
        raise ShapeMismatch("attention: input dim %d vs w1 rows %d" % (hd, w1.shape[0]))
    if w2.shape != (w1.shape[1],):
        raise ShapeMismatch("attention: w2 shape %s vs (%d,)" % (w2.shape, w1.shape[1]))
    if mask.shape != (b, t):
        raise ShapeMismatch("attention: mask shape %s vs (%d, %d)" % (mask.shape, b, t))
    if b and (mask.sum(axis=1) == 0).any():
        raise EmptySequence("attention input has a fully masked row")
    u = np.tanh(h @ w1)                     # [b, t, a]
    scores = u @ w2                         # [b, t]
    scores = np.where(mask > 0, scores, NEG_INF)
    alpha = softmax(scores, axis=1)         # zeros at masked positions
    out = (alpha[:, :, None] * h).sum(axis=1)
    cache = (h, w1, w2, u, alpha) if want_cache else None
    return out, cache


def self_attention_backward(cache, dout):
    h, w1, w2, u, alpha = cache
    dalpha = np.einsum("bh,bth->bt", dout, h)
    dh = alpha[:, :, None] * dout[:, None, :]
    ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    du = ds[:, :, None] * w2[None, None, :]
    dw2 = (u * ds[:, :, None]).sum(axis=(0, 1))
    dpre = du * (1 - u * u)
    dh = dh + dpre @ w1.T
    dw1 = np.einsum("bti,btj->ij", h, dpre).astype(F32)
    return dh.astype(F32), dw1, dw2.astype(F32)


# --- softmax cross entropy ---

def softmax_cross_entropy(logits, targets, mask=None, want_cache=False):
    """Mean negative log softmax probability of the target over unmasked rows.

    logits [n, c] float32, targets [n] int64, mask [n] optional.
    """
    if logits.ndim != 2:
        raise ShapeMismatch("cross entropy expects [n, c] logits, got %s" % (logits.shape,))
    n, c = logits.shape
    if targets.shape != (n,):
        raise ShapeMismatch("cross entropy: %d logit rows vs targets %s" % (n, targets.shape))
    if mask is None:
        valid = np.ones(n, dtype=bool)
    else:
        if mask.shape != (n,):
            raise ShapeMismatch("cross entropy: mask shape %s vs (%d,)" % (mask.shape, n))
        valid = mask > 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptyLoss("cross entropy over zero unmasked rows")
    tv = targets[valid]
    if tv.size and (tv.min() < 0 or tv.max() >= c):
        raise TargetOutOfRange("target id outside [0, %d)" % c)

    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    denom = ex.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    nll = -log_probs[np.arange(n), np.clip(targets, 0, c - 1)]
    loss = np.float32((nll * valid).sum() / np.float32(n_valid))
    cache = (ex / denom, targets, valid, n_valid, c) if want_cache else None
    return np.asarray(loss, dtype=F32), cache


def softmax_cross_entropy_backward(cache, dloss):
    probs, targets, valid, n_valid, c = cache
    n = probs.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(n), np.clip(targets, 0, c - 1)] -= 1.0
    dlogits *= valid[:, None]
    dlogits *= np.float32(dloss) / np.float32(n_valid)
    return dlogits.astype(F32)


# --- highway combination used by the char-CNN embedding ---

def highway(x, layers):
    """Per layer: relu transform gated against the carried input.

    layers is a sequence of (w_t, b_t, w_g, b_g); each keeps the feature dim.
    """
    out = x
    for w_t, b_t, w_g, b_g in layers:
        hidden = np.maximum(linear(out, w_t, b_t), np.float32(0.0))
        gate = sigmoid(linear(out, w_g, b_g))
        out = gate * hidden + (np.float32(1.0) - gate) * out
    return out
