"""First-order Markov next-location predictor with a structurally zero diagonal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MarkovModel:
    m: int
    counts: np.ndarray  # (m, m), zero diagonal
    global_dist: np.ndarray  # run-length segment occurrences per location

    def predict(self, current: int) -> int:
        return markov_predict(self, current)


def _dedup(seq) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.int64)
    if len(seq) == 0:
        return seq
    return seq[np.concatenate([[True], seq[1:] != seq[:-1]])]


def markov_fit(histories, m: int) -> MarkovModel:
    """Count transitions between consecutive distinct locations of every history.

    ``histories`` is an iterable of location-ID sequences at granularity ``m``.
    """
    counts = np.zeros((m, m), dtype=np.int64)
    glob = np.zeros(m, dtype=np.int64)
    seen = False
    for h in histories:
        seen = True
        seq = _dedup(h)
        if len(seq) == 0:
            continue
        if seq.max() >= m or seq.min() < 0:
            raise ValueError(f"location id outside [0, {m})")
        np.add.at(counts, (seq[:-1], seq[1:]), 1)
        np.add.at(glob, seq, 1)
    if not seen:
        raise ValueError("markov_fit needs at least one history")
    np.fill_diagonal(counts, 0)
    return MarkovModel(m, counts, glob)


def markov_predict(model: MarkovModel, current: int) -> int:
    """Most frequent successor of ``current``; smallest ID wins ties.

    Unseen states fall back to the most frequent location overall, never
    returning ``current`` itself.
    """
    if not 0 <= current < model.m:
        raise ValueError(f"current location {current} outside [0, {model.m})")
    row = model.counts[current]
    if row.any():
        return int(np.argmax(row))
    g = model.global_dist.astype(float).copy()
    g[current] = -np.inf
    return int(np.argmax(g))
