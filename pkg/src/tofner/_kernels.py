"""Hot inner loops, compiled with numba when available.

Every kernel exists twice: a ``@njit`` loop version and a pure-numpy /
pure-python version with identical semantics. Set ``TOFNER_DISABLE_NUMBA=1``
before import to force the fallback path (the tests exercise both).
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("TOFNER_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("numba disabled by TOFNER_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ----------------------------------------------------------------------------
# softmax cross-entropy over rows


def softmax_xent_numpy(logits, targets, weights):
    """Row softmax, weighted NLL sum and its gradient w.r.t. the logits.

    Returns ``(probs, loss, dlogits)`` with ``loss = sum_i w_i * -log p_i[t_i]``.
    """
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    probs = e / s
    rows = np.arange(logits.shape[0])
    logp = z[rows, targets] - np.log(s[:, 0])
    loss = float(-(weights * logp).sum())
    d = probs * weights[:, None]
    d[rows, targets] -= weights
    return probs, loss, d


@njit(cache=True)
def _softmax_xent_jit(logits, targets, weights):
    n, c = logits.shape
    probs = np.empty((n, c))
    d = np.empty((n, c))
    loss = 0.0
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > m:
                m = logits[i, j]
        s = 0.0
        for j in range(c):
            probs[i, j] = np.exp(logits[i, j] - m)
            s += probs[i, j]
        w = weights[i]
        t = targets[i]
        loss -= w * (logits[i, t] - m - np.log(s))
        for j in range(c):
            probs[i, j] /= s
            d[i, j] = w * probs[i, j]
        d[i, t] -= w
    return probs, loss, d


def softmax_numpy(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ----------------------------------------------------------------------------
# embedding gradient scatter-add


def scatter_add_rows_numpy(out, ids, rows):
    np.add.at(out, ids, rows)


@njit(cache=True)
def _scatter_add_rows_jit(out, ids, rows):
    n, d = rows.shape
    for i in range(n):
        r = ids[i]
        for j in range(d):
            out[r, j] += rows[i, j]


# ----------------------------------------------------------------------------
# BIO repair over tag indices: 0 = O, 1 + 2t = B-t, 2 + 2t = I-t


def bio_repair_numpy(tag_ids):
    out = np.array(tag_ids, dtype=np.int64, copy=True)
    for i in range(out.shape[0]):
        tag = out[i]
        if tag > 0 and tag % 2 == 0:
            begin = tag - 1
            prev = out[i - 1] if i > 0 else 0
            if prev != begin and prev != tag:
                out[i] = begin
    return out


@njit(cache=True)
def _bio_repair_jit(tag_ids):
    out = tag_ids.copy()
    for i in range(out.shape[0]):
        tag = out[i]
        if tag > 0 and tag % 2 == 0:
            begin = tag - 1
            prev = out[i - 1] if i > 0 else 0
            if prev != begin and prev != tag:
                out[i] = begin
    return out


# ----------------------------------------------------------------------------
# greedy MRC span selection


def mrc_greedy_numpy(p_start, p_end, threshold, max_span_len):
    """Greedy non-overlapping spans by descending ``p_start[s] * p_end[e]``.

    Ties break on smaller start, then smaller end. Returns an ``(k, 2)`` int array.
    """
    n = p_start.shape[0]
    starts = [s for s in range(n) if p_start[s] >= threshold]
    ends = [e for e in range(n) if p_end[e] >= threshold]
    cands = [
        (-(p_start[s] * p_end[e]), s, e)
        for s in starts
        for e in ends
        if s <= e <= s + max_span_len - 1
    ]
    cands.sort()
    taken: list[tuple[int, int]] = []
    for _, s, e in cands:
        if all(e < ts or s > te for ts, te in taken):
            taken.append((s, e))
    taken.sort()
    return np.array(taken, dtype=np.int64).reshape(-1, 2)


@njit(cache=True)
def _mrc_greedy_jit(p_start, p_end, threshold, max_span_len):
    n = p_start.shape[0]
    cap = n * min(max_span_len, n) if max_span_len > 0 else 0
    cs = np.empty(cap, dtype=np.int64)
    ce = np.empty(cap, dtype=np.int64)
    sc = np.empty(cap)
    k = 0
    for s in range(n):
        if p_start[s] < threshold:
            continue
        hi = min(n - 1, s + max_span_len - 1)
        for e in range(s, hi + 1):
            if p_end[e] >= threshold:
                cs[k] = s
                ce[k] = e
                sc[k] = p_start[s] * p_end[e]
                k += 1
    used = np.zeros(n, dtype=np.bool_)
    alive = np.ones(k, dtype=np.bool_)
    out = np.empty((k, 2), dtype=np.int64)
    m = 0
    while True:
        best = -1
        for c in range(k):
            if not alive[c]:
                continue
            if best < 0 or sc[c] > sc[best] or (
                sc[c] == sc[best] and (cs[c] < cs[best] or (cs[c] == cs[best] and ce[c] < ce[best]))
            ):
                best = c
        if best < 0:
            break
        out[m, 0] = cs[best]
        out[m, 1] = ce[best]
        m += 1
        for t in range(cs[best], ce[best] + 1):
            used[t] = True
        for c in range(k):
            if alive[c]:
                for t in range(cs[c], ce[c] + 1):
                    if used[t]:
                        alive[c] = False
                        break
    res = out[:m]
    order = np.argsort(res[:, 0])
    return res[order]


# ----------------------------------------------------------------------------
# layer norm over the last axis (rows of a 2-D view)


def layernorm_fwd_numpy(x, g, b, eps):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * g + b, xhat, rstd[:, 0]


def layernorm_bwd_numpy(dy, xhat, rstd, g):
    dg = (dy * xhat).sum(0)
    db = dy.sum(0)
    dxhat = dy * g
    dx = rstd[:, None] * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


@njit(cache=True)
def _layernorm_fwd_jit(x, g, b, eps):
    n, d = x.shape
    y = np.empty((n, d))
    xhat = np.empty((n, d))
    rstd = np.empty(n)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        r = 1.0 / np.sqrt(var / d + eps)
        rstd[i] = r
        for j in range(d):
            xh = (x[i, j] - mu) * r
            xhat[i, j] = xh
            y[i, j] = xh * g[j] + b[j]
    return y, xhat, rstd


@njit(cache=True)
def _layernorm_bwd_jit(dy, xhat, rstd, g):
    n, d = dy.shape
    dx = np.empty((n, d))
    dg = np.zeros(d)
    db = np.zeros(d)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            dxh = dy[i, j] * g[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
            dg[j] += dy[i, j] * xhat[i, j]
            db[j] += dy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            dx[i, j] = rstd[i] * (dy[i, j] * g[j] - m1 - xhat[i, j] * m2)
    return dx, dg, db


# ----------------------------------------------------------------------------
# dispatch


def softmax_xent(logits, targets, weights):
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if HAVE_NUMBA:
        probs, loss, d = _softmax_xent_jit(logits, targets, weights)
        return probs, float(loss), d
    return softmax_xent_numpy(logits, targets, weights)


def scatter_add_rows(out, ids, rows):
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if HAVE_NUMBA:
        _scatter_add_rows_jit(out, ids, rows)
    else:
        scatter_add_rows_numpy(out, ids, rows)


def bio_repair(tag_ids):
    tag_ids = np.ascontiguousarray(tag_ids, dtype=np.int64)
    if HAVE_NUMBA:
        return _bio_repair_jit(tag_ids)
    return bio_repair_numpy(tag_ids)


def mrc_greedy(p_start, p_end, threshold, max_span_len):
    p_start = np.ascontiguousarray(p_start, dtype=np.float64)
    p_end = np.ascontiguousarray(p_end, dtype=np.float64)
    if HAVE_NUMBA:
        return _mrc_greedy_jit(p_start, p_end, float(threshold), int(max_span_len))
    return mrc_greedy_numpy(p_start, p_end, threshold, max_span_len)


def layernorm_fwd(x, g, b, eps):
    """Row layer norm of a 2-D array; returns ``(y, xhat, rstd)``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if HAVE_NUMBA:
        return _layernorm_fwd_jit(x, g, b, eps)
    return layernorm_fwd_numpy(x, g, b, eps)


def layernorm_bwd(dy, xhat, rstd, g):
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    if HAVE_NUMBA:
        return _layernorm_bwd_jit(dy, xhat, rstd, g)
    return layernorm_bwd_numpy(dy, xhat, rstd, g)


softmax = softmax_numpy

# direct handles for tests and the benchmark, independent of the env flag
JIT_KERNELS = {
    "softmax_xent": _softmax_xent_jit,
    "scatter_add_rows": _scatter_add_rows_jit,
    "bio_repair": _bio_repair_jit,
    "mrc_greedy": _mrc_greedy_jit,
    "layernorm_fwd": _layernorm_fwd_jit,
    "layernorm_bwd": _layernorm_bwd_jit,
}
NUMPY_KERNELS = {
    "softmax_xent": softmax_xent_numpy,
    "scatter_add_rows": scatter_add_rows_numpy,
    "bio_repair": bio_repair_numpy,
    "mrc_greedy": mrc_greedy_numpy,
    "layernorm_fwd": layernorm_fwd_numpy,
    "layernorm_bwd": layernorm_bwd_numpy,
}
