"""Random forest of CART trees (Gini impurity, axis-aligned thresholds)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

TIE_TOL = 1e-9


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: object = "sqrt"  # "sqrt", "all" or an int
    bootstrap: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")

    def n_split_features(self, n_features: int) -> int:
        f = self.features_per_split
        if f == "sqrt":
            return max(1, int(math.isqrt(n_features)))
        if f == "all" or f is None:
            return n_features
        return max(1, min(int(f), n_features))


@dataclass
class Tree:
    """Flat node arrays; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes) class counts of training rows reaching each node
    gain: np.ndarray  # Gini decrease of the split at each internal node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active[r] = self.feature[node[r]] >= 0
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        c = self.counts[self.apply(X)].astype(float)
        return c / c.sum(1, keepdims=True)

    def to_json(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"counts": self.counts[node].tolist()}
        return {"feature": int(self.feature[node]), "threshold": float(self.threshold[node]),
                "left": self.to_json(int(self.left[node])),
                "right": self.to_json(int(self.right[node]))}

    @classmethod
    def from_json(cls, obj: dict, n_classes: int) -> "Tree":
        feat, thr, left, right, counts, gain = [], [], [], [], [], []

        def visit(o):
            i = len(feat)
            feat.append(-1)
            thr.append(0.0)
            left.append(-1)
            right.append(-1)
            counts.append(None)
            gain.append(0.0)
            if "counts" in o:
                counts[i] = np.asarray(o["counts"], dtype=np.int64)
                return i
            feat[i], thr[i] = o["feature"], o["threshold"]
            left[i] = visit(o["left"])
            right[i] = visit(o["right"])
            counts[i] = counts[left[i]] + counts[right[i]]
            return i

        visit(obj)
        return cls(np.array(feat), np.array(thr), np.array(left), np.array(right),
                   np.vstack(counts).reshape(-1, n_classes), np.array(gain))


@njit(cache=True)
def _split_kernel(X, idx, feats, y, n_classes, min_leaf, tol):
    n = idx.shape[0]
    total = np.zeros(n_classes, np.int64)
    for r in range(n):
        total[y[idx[r]]] += 1
    tot_sq = 0
    for c in range(n_classes):
        tot_sq += total[c] * total[c]
    best_f = -1
    best_s = -np.inf
    best_thr = 0.0
    x = np.empty(n)
    counts = np.empty(n_classes, np.int64)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        for r in range(n):
            x[r] = X[idx[r], f]
        order = np.argsort(x, kind="mergesort")
        if x[order[0]] == x[order[n - 1]]:
            continue
        counts[:] = 0
        sq_left = 0
        sq_right = tot_sq
        for j in range(n - 1):
            c = y[idx[order[j]]]
            sq_left += 2 * counts[c] + 1
            sq_right -= 2 * (total[c] - counts[c]) - 1
            counts[c] += 1
            n_left = j + 1
            n_right = n - n_left
            if n_left < min_leaf or n_right < min_leaf:
                continue
            lo = x[order[j]]
            hi = x[order[j + 1]]
            if not lo < hi:
                continue
            s = sq_left / n_left + sq_right / n_right
            if best_f < 0 or s > best_s + tol * max(1.0, abs(best_s)):
                best_f = fi
                best_s = s
                thr = lo + (hi - lo) / 2.0
                if not (lo <= thr and thr < hi):
                    thr = lo
                best_thr = thr
    return best_f, best_thr, best_s, tot_sq / n


def best_split(X: np.ndarray, y: np.ndarray, idx: np.ndarray, feats: np.ndarray,
               n_classes: int, min_leaf: int):
    """Exhaustive Gini split search for the node holding rows ``idx``.

    Candidate thresholds are midpoints between consecutive distinct values of
    each feature in ``feats`` (ascending); rows with ``x <= threshold`` go
    left.  Maximising ``sum(left**2)/n_left + sum(right**2)/n_right`` over
    class counts is equivalent to minimising the weighted child Gini
    impurity, and the squared-count sums stay exact integers.  Ties go to the
    lowest feature index, then the lowest threshold.

    Returns ``(feature, threshold, gain)`` or ``None`` when no split lowers
    the impurity.
    """
    fi, thr, s, parent = _split_kernel(X, idx, feats, y, n_classes, min_leaf, TIE_TOL)
    if fi < 0:
        return None
    n = len(idx)
    gain = (s - parent) / n
    if gain <= TIE_TOL / n:
        return None
    return int(feats[fi]), float(thr), float(gain)


def build_tree(X: np.ndarray, y: np.ndarray, n_classes: int, cfg: ForestConfig,
               rng: np.random.Generator, sample: np.ndarray | None = None) -> Tree:
    """Grow one CART tree on rows ``sample`` of ``X`` (all rows by default; repeats allowed)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    sample = np.arange(len(y)) if sample is None else np.asarray(sample, dtype=np.int64)
    n_features = X.shape[1]
    k = cfg.n_split_features(n_features)
    feat, thr, left, right, counts, gain = [], [], [], [], [], []

    def new_node(idx):
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=n_classes))
        gain.append(0.0)
        return len(feat) - 1

    root = new_node(sample)
    stack = [(root, sample, 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        if (yn == yn[0]).all() or len(idx) < 2 * cfg.min_samples_leaf:
            continue
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        feats = np.arange(n_features) if k == n_features else np.sort(rng.choice(n_features, k, replace=False))
        split = best_split(X, y, idx, feats, n_classes, cfg.min_samples_leaf)
        if split is None:
            continue
        f, t, g = split
        go_left = X[idx, f] <= t
        li, ri = idx[go_left], idx[~go_left]
        feat[node], thr[node], gain[node] = f, t, g
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is expanded first (node order is pre-order)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.vstack(counts), np.array(gain))


@dataclass
class ForestModel:
    trees: list
    n_classes: int
    config: ForestConfig = field(default_factory=ForestConfig)

    def predict_proba(self, X) -> np.ndarray:
        X = _check_X(X)
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def save(self, path):
        obj = {"n_classes": self.n_classes, "config": _cfg_json(self.config),
               "trees": [t.to_json() for t in self.trees]}
        Path(path).write_text(json.dumps(obj, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ForestModel":
        obj = json.loads(Path(path).read_text())
        cfg = ForestConfig(**obj["config"])
        return cls([Tree.from_json(t, obj["n_classes"]) for t in obj["trees"]], obj["n_classes"], cfg)


def _cfg_json(cfg: ForestConfig) -> dict:
    return {"n_trees": cfg.n_trees, "max_depth": cfg.max_depth, "min_samples_leaf": cfg.min_samples_leaf,
            "features_per_split": cfg.features_per_split, "bootstrap": cfg.bootstrap,
            "rng_seed": cfg.rng_seed}


def _check_X(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    return X


def _fit_one(X, y, n_classes, cfg, seed_seq):
    rng = np.random.default_rng(seed_seq)
    n = len(y)
    sample = rng.integers(0, n, n) if cfg.bootstrap else np.arange(n)
    return build_tree(X, y, n_classes, cfg, rng, sample)


def forest_fit(X, y, cfg: ForestConfig = ForestConfig(), n_classes: int | None = None,
               n_jobs: int = 1) -> ForestModel:
    """Bagged CART trees; each tree draws its bootstrap and feature subsets from its own sub-seed."""
    X = _check_X(X)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0 or len(X) != len(y):
        raise ValueError("X and y must be non-empty and of equal length")
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("labels outside [0, n_classes)")
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.n_trees)
    if n_jobs == 1:
        trees = [_fit_one(X, y, n_classes, cfg, s) for s in seeds]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futs = [pool.submit(_fit_one, X, y, n_classes, cfg, s) for s in seeds]
            trees = [f.result() for f in futs]
    return ForestModel(trees, n_classes, cfg)


def forest_predict(model: ForestModel, x):
    """(class, probability vector) for one row; smallest class ID wins ties."""
    p = model.predict_proba(x)[0]
    return int(np.argmax(p)), p
