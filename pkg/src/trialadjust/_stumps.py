"""Compiled kernels for least-squares gradient boosting with depth-1 trees.

Features are pre-binned: a feature with at most ``max_bins`` distinct values
keeps every midpoint as a candidate threshold (exact splits), otherwise the
candidates are midpoints between quantiles.
"""

import numpy as np
from numba import njit


def make_bins(X, max_bins=256):
    """Integer bin codes (n, p) and per-feature candidate thresholds."""
    n, p = X.shape
    thresholds = []
    codes = np.empty((n, p), dtype=np.int32)
    for j in range(p):
        u = np.unique(X[:, j])
        if u.size > max_bins:
            u = np.unique(np.quantile(X[:, j], np.linspace(0.0, 1.0, max_bins)))
        t = 0.5 * (u[:-1] + u[1:])
        thresholds.append(t)
        codes[:, j] = np.searchsorted(t, X[:, j], side="left")
    width = max(1, max(t.size for t in thresholds))
    thr = np.full((p, width), np.inf)
    n_thr = np.zeros(p, dtype=np.int64)
    for j, t in enumerate(thresholds):
        thr[j, : t.size] = t
        n_thr[j] = t.size
    return codes, thr, n_thr


@njit(cache=True)
def fit_stumps(codes, y, thr_table, n_thr, rounds, lr, min_leaf):
    n, p = codes.shape
    nb = thr_table.shape[1] + 1
    counts = np.zeros((p, nb))
    for i in range(n):
        for j in range(p):
            counts[j, codes[i, j]] += 1.0
    feat = np.full(rounds, -1, dtype=np.int64)
    thr = np.zeros(rounds)
    left = np.zeros(rounds)
    right = np.zeros(rounds)
    f0 = 0.0
    for i in range(n):
        f0 += y[i]
    f0 /= n
    F = np.full(n, f0)
    sums = np.zeros((p, nb))
    for m in range(rounds):
        sums[:, :] = 0.0
        total = 0.0
        for i in range(n):
            r = y[i] - F[i]
            total += r
            for j in range(p):
                sums[j, codes[i, j]] += r
        best_gain = -1.0
        best_j = -1
        best_b = -1
        best_sl = 0.0
        best_nl = 0.0
        for j in range(p):
            sl = 0.0
            nl = 0.0
            for b in range(n_thr[j]):
                sl += sums[j, b]
                nl += counts[j, b]
                nr = n - nl
                if nr < min_leaf:
                    break
                if nl < min_leaf:
                    continue
                sr = total - sl
                gain = sl * sl / nl + sr * sr / nr
                if gain > best_gain:
                    best_gain = gain
                    best_j = j
                    best_b = b
                    best_sl = sl
                    best_nl = nl
        if best_j < 0:
            break
        lv = lr * best_sl / best_nl
        rv = lr * (total - best_sl) / (n - best_nl)
        feat[m] = best_j
        thr[m] = thr_table[best_j, best_b]
        left[m] = lv
        right[m] = rv
        for i in range(n):
            if codes[i, best_j] <= best_b:
                F[i] += lv
            else:
                F[i] += rv
    return f0, feat, thr, left, right


@njit(cache=True)
def predict_stumps(X, f0, feat, thr, left, right, rounds):
    n = X.shape[0]
    out = np.full(n, f0)
    for m in range(rounds):
        j = feat[m]
        if j < 0:
            break
        t = thr[m]
        lv = left[m]
        rv = right[m]
        for i in range(n):
            if X[i, j] <= t:
                out[i] += lv
            else:
                out[i] += rv
    return out


@njit(cache=True)
def staged_sse(X, y, f0, feat, thr, left, right):
    """Validation SSE after 0, 1, ..., rounds boosting steps."""
    n = X.shape[0]
    rounds = feat.shape[0]
    out = np.zeros(rounds + 1)
    pred = np.full(n, f0)
    s = 0.0
    for i in range(n):
        s += (y[i] - pred[i]) ** 2
    out[0] = s
    for m in range(rounds):
        j = feat[m]
        if j >= 0:
            for i in range(n):
                if X[i, j] <= thr[m]:
                    pred[i] += left[m]
                else:
                    pred[i] += right[m]
        s = 0.0
        for i in range(n):
            s += (y[i] - pred[i]) ** 2
        out[m + 1] = s
    return out
