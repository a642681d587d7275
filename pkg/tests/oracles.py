"""Independent reference implementations used as test oracles.

Each oracle recomputes a quantity from its definition with a different code
path than the library (record-level scans instead of run-length helpers,
exact rational arithmetic instead of floats, explicit loops instead of
vectorised kernels).
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

STAYS = (60, 120, 300, 600)
CADENCE = 60


# -- target selection ---------------------------------------------------------

def canonical_label_sequences(length: int, alphabet: int = 4):
    """Segment label sequences with the current location fixed to 0.

    Consecutive labels differ and the non-current labels appear in
    first-appearance order, so every future over an alphabet of ``alphabet``
    locations is equal to one of these up to renaming the other locations.
    """
    out = []

    def rec(seq, next_new):
        if len(seq) == length:
            out.append(tuple(seq))
            return
        for lab in range(min(next_new + 1, alphabet)):
            if seq and seq[-1] == lab:
                continue
            rec(seq + [lab], next_new + 1 if lab == next_new else next_new)

    rec([], 1)
    return out


def stay_grid(length: int) -> np.ndarray:
    return np.array(list(itertools.product(STAYS, repeat=length)), dtype=np.int64)


def targets_for_grid(labels, stays: np.ndarray, criterion) -> np.ndarray:
    """Target label (or -1) for every row of ``stays``; the current location is 0."""
    lab = np.asarray(labels)
    out = np.full(len(stays), -1)
    if criterion.kind == "successive":
        moved = np.flatnonzero(lab != 0)
        if len(moved):
            out[:] = lab[moved[0]]
        return out
    if criterion.kind == "important":
        ok = (stays >= 60 * criterion.k) & (lab != 0)[None, :]
        hit = ok.any(axis=1)
        out[hit] = lab[ok.argmax(axis=1)[hit]]
        return out
    k = criterion.k
    if len(lab) < k or not (lab[:k] != 0).any():
        return out
    scores = np.where((lab[:k] != 0)[None, :], stays[:, :k], -1)
    out[:] = lab[scores.argmax(axis=1)]
    return out


def records_for_segments(labels, stays, start=0):
    """Timestamps and locations at a 60 s cadence realising the given segments.

    Every segment but the last lasts exactly its stay; the last one ends on
    its final record, so its (window-truncated) stay is also the given value.
    """
    ts, locs = [], []
    t = start
    for i, (lab, stay) in enumerate(zip(labels, stays)):
        n = stay // CADENCE + (1 if i == len(labels) - 1 else 0)
        for j in range(n):
            ts.append(t + j * CADENCE)
            locs.append(lab)
        t += stay
    return ts, locs


def brute_select(timestamps, locations, current, criterion):
    """Record-level definition of each criterion, no run-length helper involved."""
    n = len(locations)
    if criterion.kind == "successive":
        for loc in locations:
            if loc != current:
                return loc
        return None
    # segment starts found by scanning the raw records
    starts = [i for i in range(n) if i == 0 or locations[i] != locations[i - 1]]
    segs = []
    for a_i, a in enumerate(starts):
        leave = timestamps[starts[a_i + 1]] if a_i + 1 < len(starts) else timestamps[-1]
        segs.append((locations[a], leave - timestamps[a]))
    if criterion.kind == "important":
        for loc, stay in segs:
            if loc != current and stay >= 60 * criterion.k:
                return loc
        return None
    if len(segs) < criterion.k:
        return None
    best = None
    for loc, stay in segs[:criterion.k]:
        if loc == current:
            continue
        if best is None or stay > best[1]:
            best = (loc, stay)
    return None if best is None else best[0]


# -- markov --------------------------------------------------------------------

def brute_markov_counts(histories, m):
    counts = [[0] * m for _ in range(m)]
    glob = [0] * m
    for h in histories:
        prev = None
        for x in h:
            if x == prev:
                continue
            glob[x] += 1
            if prev is not None:
                counts[prev][x] += 1
            prev = x
    return np.array(counts), np.array(glob)


def brute_markov_predict(counts, glob, current):
    m = len(glob)
    row = [counts[current][j] for j in range(m)]
    if any(row):
        best = 0
        for j in range(m):
            if row[j] > row[best]:
                best = j
        return best
    best = None
    for j in range(m):
        if j == current:
            continue
        if best is None or glob[j] > glob[best]:
            best = j
    return best


# -- CART ----------------------------------------------------------------------

def _gini(labels, n_classes):
    n = len(labels)
    return 1 - sum(Fraction(labels.count(c), n) ** 2 for c in range(n_classes))


def exhaustive_cart(X, y, n_classes, min_leaf=1):
    """Exact-arithmetic CART: nested dict tree, same tie rules as documented."""
    X = [list(map(float, r)) for r in X]
    y = list(map(int, y))

    def grow(rows):
        labs = [y[r] for r in rows]
        counts = [labs.count(c) for c in range(n_classes)]
        if len(set(labs)) == 1 or len(rows) < 2 * min_leaf:
            return {"counts": counts}
        parent = _gini(labs, n_classes)
        best = None
        for f in range(len(X[0])):
            vals = sorted({X[r][f] for r in rows})
            for a, b in zip(vals, vals[1:]):
                thr = 0.5 * (a + b)
                left = [r for r in rows if X[r][f] <= thr]
                right = [r for r in rows if X[r][f] > thr]
                if len(left) < min_leaf or len(right) < min_leaf:
                    continue
                n = len(rows)
                child = (Fraction(len(left), n) * _gini([y[r] for r in left], n_classes)
                         + Fraction(len(right), n) * _gini([y[r] for r in right], n_classes))
                dec = parent - child
                if dec > 0 and (best is None or dec > best[0]):
                    best = (dec, f, thr, left, right)
        if best is None:
            return {"counts": counts}
        _, f, thr, left, right = best
        return {"feature": f, "threshold": thr, "left": grow(left), "right": grow(right)}

    return grow(list(range(len(y))))


# -- LSTM ----------------------------------------------------------------------

def scalar_lstm_step(emb_row, W, b, hidden):
    """One LSTM step from zero state, one scalar at a time (gate order i, f, g, o)."""
    import math

    E = len(emb_row)
    z = [emb_row[j] for j in range(E)] + [0.0] * hidden
    pre = [b[c] + sum(z[r] * W[r][c] for r in range(len(z))) for c in range(4 * hidden)]
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))  # noqa: E731
    h = []
    for j in range(hidden):
        i_g = sig(pre[j])
        g_g = math.tanh(pre[2 * hidden + j])
        o_g = sig(pre[3 * hidden + j])
        c = i_g * g_g  # forget gate multiplies the zero initial cell state
        h.append(o_g * math.tanh(c))
    return h


def finite_difference_check(params: dict, loss_fn, grads: dict, step=1e-5):
    """Central differences for every scalar of every tensor.

    Returns {name: (norm-relative error, worst elementwise relative error)}.
    """
    report = {}
    for name, tensor in params.items():
        fd = np.zeros_like(tensor)
        for idx in np.ndindex(tensor.shape):
            old = tensor[idx]
            tensor[idx] = old + step
            up = loss_fn()
            tensor[idx] = old - step
            down = loss_fn()
            tensor[idx] = old
            fd[idx] = (up - down) / (2 * step)
        g = grads[name]
        denom = max(np.linalg.norm(fd), np.linalg.norm(g), 1e-12)
        scale = np.maximum(np.abs(fd), np.abs(g))
        big = scale > 1e-6
        elem = float(np.max(np.abs(fd - g)[big] / scale[big])) if big.any() else 0.0
        report[name] = (float(np.linalg.norm(fd - g) / denom), elem)
    return report
