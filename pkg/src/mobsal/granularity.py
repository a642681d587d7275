"""K-Means discretisation of geo points into location IDs, and transition counts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_GRANULARITIES, Trajectory, run_lengths


@dataclass(frozen=True)
class GranularityConfig:
    m_values: tuple = DEFAULT_GRANULARITIES
    kmeans_max_iters: int = 100
    kmeans_tolerance: float = 1e-8
    kmeans_restarts: int = 4

    def __post_init__(self):
        ms = list(self.m_values)
        if any(m < 2 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("m_values must be strictly increasing and >= 2")


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (m, d), row i = cluster i (0 = largest)
    labels: np.ndarray
    inertia: float
    inertia_history: list = field(default_factory=list)

    def predict(self, points: np.ndarray) -> np.ndarray:
        return nearest_centroid(np.asarray(points, float), self.centroids)[0]


def nearest_centroid(points: np.ndarray, centroids: np.ndarray, chunk: int = 65536):
    """Index of and squared distance to the closest centroid, lowest index on ties."""
    n = len(points)
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    c2 = (centroids ** 2).sum(1)
    for a in range(0, n, chunk):
        p = points[a:a + chunk]
        d = c2[None, :] - 2.0 * p @ centroids.T
        idx = d.argmin(1)
        labels[a:a + chunk] = idx
        diff = p - centroids[idx]
        dist[a:a + chunk] = (diff ** 2).sum(1)
    return labels, dist


def _kmeanspp(points, weights, m, rng):
    n = len(points)
    centroids = np.empty((m, points.shape[1]))
    first = rng.choice(n, p=weights / weights.sum())
    centroids[0] = points[first]
    d2 = ((points - centroids[0]) ** 2).sum(1)
    for j in range(1, m):
        w = d2 * weights
        total = w.sum()
        idx = rng.choice(n, p=w / total) if total > 0 else rng.integers(n)
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(1))
    return centroids


def _lloyd(points, weights, centroids, max_iters, tol):
    history = []
    m = len(centroids)
    prev = np.inf
    for _ in range(max_iters):
        labels, d2 = nearest_centroid(points, centroids)
        inertia = float((d2 * weights).sum())
        history.append(inertia)
        if prev - inertia <= tol:
            break
        prev = inertia
        wsum = np.bincount(labels, weights, minlength=m)
        new = np.empty_like(centroids)
        for dim in range(points.shape[1]):
            new[:, dim] = np.bincount(labels, weights * points[:, dim], minlength=m)
        empty = wsum == 0
        new[~empty] /= wsum[~empty, None]
        if empty.any():
            # reseed empty clusters at the points currently worst served
            far = np.argsort(-d2 * weights, kind="stable")[: int(empty.sum())]
            new[empty] = points[far]
        centroids = new
    labels, d2 = nearest_centroid(points, centroids)
    inertia = float((d2 * weights).sum())
    if not history or inertia != history[-1]:
        history.append(inertia)
    return centroids, labels, inertia, history


def kmeans_fit(points, m: int, cfg: GranularityConfig = GranularityConfig(),
               rng: np.random.Generator | None = None, weights=None) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding, best of ``cfg.kmeans_restarts``.

    ``weights`` lets callers fit on de-duplicated points with multiplicities,
    which is equivalent to fitting on the expanded point set.  Cluster IDs are
    relabelled by descending (weighted) size.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    rng = rng if rng is not None else np.random.default_rng(0)
    w = np.ones(len(points)) if weights is None else np.asarray(weights, float)
    n_distinct = len(np.unique(points, axis=0)) if len(points) else 0
    if n_distinct < m:
        raise ValueError(f"need at least {m} distinct points, got {n_distinct}")
    best = None
    for _ in range(max(1, cfg.kmeans_restarts)):
        init = _kmeanspp(points, w, m, rng)
        res = _lloyd(points, w, init, cfg.kmeans_max_iters, cfg.kmeans_tolerance)
        if best is None or res[2] < best[2]:
            best = res
    centroids, labels, inertia, history = best
    sizes = np.bincount(labels, w, minlength=m)
    order = np.argsort(-sizes, kind="stable")
    remap = np.empty(m, dtype=np.int64)
    remap[order] = np.arange(m)
    return KMeansResult(centroids[order], remap[labels], inertia, history)


@dataclass
class GranularityModel:
    """Fitted centroids per granularity plus the assigned location IDs."""

    fits: dict  # M -> KMeansResult (labels refer to the unique-point table)
    labels: dict  # M -> per-input-point location IDs

    def centroid_rows(self):
        for m, fit in self.fits.items():
            for cid, (x, y) in enumerate(fit.centroids):
                yield m, cid, float(x), float(y)


def assign_all_granularities(points, cfg: GranularityConfig = GranularityConfig(),
                             rng: np.random.Generator | None = None) -> GranularityModel:
    """Fit one K-Means per M over the pooled points and label every point."""
    points = np.asarray(points, dtype=float)
    rng = rng if rng is not None else np.random.default_rng(0)
    uniq, inverse, counts = np.unique(points, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    fits, labels = {}, {}
    for m in cfg.m_values:
        fit = kmeans_fit(uniq, m, cfg, rng, weights=counts)
        fits[m] = fit
        labels[m] = fit.labels[inverse]
    return GranularityModel(fits, labels)


@dataclass
class TransitionMatrix:
    m: int
    counts: np.ndarray

    def filtered(self, min_count: int) -> np.ndarray:
        out = self.counts.copy()
        out[out < min_count] = 0
        return out

    def export_rows(self, min_count: int = 1):
        f = self.filtered(min_count)
        for i, j in zip(*np.nonzero(f)):
            yield self.m, int(i), int(j), int(f[i, j])


def transition_counts(trajectories, m: int, zero_diagonal: bool = True,
                      min_count_filter: int = 0) -> TransitionMatrix:
    """Count moves between consecutive distinct locations (run boundaries).

    ``min_count_filter`` applies only to exported rows (``export_rows``); the
    stored matrix keeps every count.
    """
    counts = np.zeros((m, m), dtype=np.int64)
    for traj in trajectories:
        if isinstance(traj, Trajectory):
            if len(traj) == 0:
                continue
            seq, _, _ = run_lengths(traj.timestamps, traj.loc(m))
        else:
            seq = np.asarray(traj, dtype=np.int64)
            if len(seq) == 0:
                continue
            seq = seq[np.concatenate([[True], seq[1:] != seq[:-1]])]
        np.add.at(counts, (seq[:-1], seq[1:]), 1)
    if zero_diagonal:
        np.fill_diagonal(counts, 0)
    return TransitionMatrix(m, counts)


def mean_stay_seconds(trajectories, m: int) -> float:
    """Average run-length stay over all segments of all trajectories."""
    total, n = 0, 0
    for traj in trajectories:
        _, enter, leave = run_lengths(traj.timestamps, traj.loc(m))
        total += int((leave - enter).sum())
        n += len(enter)
    return total / n if n else float("nan")
