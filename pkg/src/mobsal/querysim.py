"""Query simulation, target labelling and trajectory-grouped dataset splits."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .core import Trajectory, run_lengths

NO_LABEL = None


@dataclass(frozen=True)
class TargetCriterion:
    """``kind`` is "successive", "important" (k in minutes) or "longest" (k segments)."""

    kind: str
    k: int = 0

    def __post_init__(self):
        if self.kind not in ("successive", "important", "longest"):
            raise ValueError(f"unknown criterion kind {self.kind!r}")
        if self.kind == "important" and self.k <= 0:
            raise ValueError("Important@K needs k_minutes > 0")
        if self.kind == "longest" and self.k < 1:
            raise ValueError("Longest@K needs k_count >= 1")

    @property
    def name(self) -> str:
        if self.kind == "successive":
            return "Successive"
        return f"{'Important' if self.kind == 'important' else 'Longest'}@{self.k}"

    @classmethod
    def parse(cls, text: str) -> "TargetCriterion":
        text = text.strip()
        if text.lower() == "successive":
            return cls("successive")
        head, _, k = text.partition("@")
        kinds = {"important": "important", "longest": "longest"}
        if head.lower() not in kinds or not k:
            raise ValueError(f"cannot parse criterion {text!r}")
        return cls(kinds[head.lower()], int(k))

    def __str__(self):
        return self.name


def Successive() -> TargetCriterion:
    return TargetCriterion("successive")


def ImportantAtK(k_minutes: int) -> TargetCriterion:
    return TargetCriterion("important", k_minutes)


def LongestAtK(k_count: int) -> TargetCriterion:
    return TargetCriterion("longest", k_count)


DEFAULT_CRITERIA = (
    Successive(),
    ImportantAtK(2), ImportantAtK(5), ImportantAtK(10),
    LongestAtK(3), LongestAtK(5), LongestAtK(10),
)


@dataclass(frozen=True, eq=False)
class Query:
    trajectory: Trajectory
    split_index: int
    query_id: int = -1

    @property
    def history(self) -> Trajectory:
        return self.trajectory.slice(0, self.split_index)

    @property
    def future(self) -> Trajectory:
        return self.trajectory.slice(self.split_index, len(self.trajectory))

    @property
    def current_location(self) -> dict:
        i = self.split_index - 1
        return {m: int(v[i]) for m, v in self.trajectory.locations.items()}

    @property
    def trajectory_id(self) -> int:
        return self.trajectory.traj_id

    @property
    def window(self) -> tuple[int, int]:
        ts = self.trajectory.timestamps
        return int(ts[0]), int(ts[self.split_index - 1])


@dataclass(frozen=True)
class LabeledQuery:
    query: Query
    criterion: TargetCriterion
    granularity: int
    target: int
    target_stay: int  # seconds the user stays at the target segment


def split_range(n: int, min_frac: float = 0.2) -> range:
    """Valid split indices: history and future each hold >= ceil(min_frac * n) records."""
    frac = Fraction(str(min_frac))
    lo = max(1, math.ceil(frac * n))
    hi = min(n - 1, math.floor((1 - frac) * n))
    return range(lo, hi + 1)


def simulate_queries(traj: Trajectory, n_per_traj: int = 5, min_frac: float = 0.2,
                     rng: np.random.Generator | None = None, first_id: int = 0) -> list[Query]:
    """Draw up to ``n_per_traj`` distinct split points uniformly without replacement."""
    rng = rng if rng is not None else np.random.default_rng(0)
    valid = split_range(len(traj), min_frac)
    if len(valid) == 0:
        return []
    k = min(n_per_traj, len(valid))
    picks = rng.choice(len(valid), size=k, replace=False)
    return [Query(traj, valid.start + int(p), first_id + i) for i, p in enumerate(picks)]


def select_from_segments(locs, stays, current: int, criterion: TargetCriterion):
    """Apply a criterion to run-length segments; returns (location, stay) or None."""
    kind = criterion.kind
    if kind == "successive":
        for loc, stay in zip(locs, stays):
            if loc != current:
                return int(loc), int(stay)
        return NO_LABEL
    if kind == "important":
        bar = 60 * criterion.k
        for loc, stay in zip(locs, stays):
            if stay >= bar and loc != current:
                return int(loc), int(stay)
        return NO_LABEL
    k = criterion.k
    if len(locs) < k:
        return NO_LABEL
    best = NO_LABEL
    for loc, stay in zip(locs[:k], stays[:k]):
        if loc == current:
            continue
        if best is None or stay > best[1]:
            best = (int(loc), int(stay))
    return best


def select_target(future: Trajectory, current: int, criterion: TargetCriterion, m: int):
    """Target location under ``criterion`` at granularity ``m``, or ``None`` (no label)."""
    if len(future) == 0:
        raise ValueError("future slice must be non-empty")
    locs, enter, leave = run_lengths(future.timestamps, future.loc(m))
    hit = select_from_segments(locs.tolist(), (leave - enter).tolist(), current, criterion)
    return NO_LABEL if hit is None else hit[0]


@dataclass
class TestingSizeTable:
    counts: dict  # (criterion, m) -> labelled queries overall
    test_counts: dict  # (criterion, m) -> labelled queries in the test partition

    def rows(self):
        for (crit, m), n in self.counts.items():
            yield crit, m, n, self.test_counts.get((crit, m), 0)


def label_dataset(queries: Sequence[Query], criteria: Iterable[TargetCriterion],
                  m_values: Iterable[int], test_ids=None):
    """Label every query for every (criterion, M) cell, dropping no-label queries per cell.

    ``test_ids`` (a set of query ids) enables the test-partition column of the
    returned ``TestingSizeTable``.
    """
    criteria = list(criteria)
    m_values = list(m_values)
    cells = {(c, m): [] for c in criteria for m in m_values}
    for q in queries:
        fut = q.future
        cur = q.current_location
        for m in m_values:
            locs, enter, leave = run_lengths(fut.timestamps, fut.loc(m))
            locs_l = locs.tolist()
            stays = (leave - enter).tolist()
            for c in criteria:
                hit = select_from_segments(locs_l, stays, cur[m], c)
                if hit is not None:
                    cells[(c, m)].append(LabeledQuery(q, c, m, hit[0], hit[1]))
    counts = {key: len(v) for key, v in cells.items()}
    test_counts = {}
    if test_ids is not None:
        test_counts = {key: sum(lq.query.query_id in test_ids for lq in v) for key, v in cells.items()}
    return cells, TestingSizeTable(counts, test_counts)


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    fractions: tuple = (0.7, 0.1, 0.2)

    def partition_of(self) -> dict:
        out = {}
        for name in ("train", "validation", "test"):
            for q in getattr(self, name):
                out[q.query_id] = name
        return out


def grouped_split(queries: Sequence[Query], fractions=(0.7, 0.1, 0.2),
                  rng: np.random.Generator | None = None) -> DatasetSplit:
    """Partition by trajectory so every query of a trajectory lands in one set."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    groups = defaultdict(list)
    for q in queries:
        groups[q.trajectory_id].append(q)
    keys = sorted(groups)
    order = rng.permutation(len(keys))
    n = len(keys)
    n_train = int(round(fractions[0] * n))
    n_val = min(n - n_train, int(round(fractions[1] * n)))
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    out = [[q for i in sorted(p) for q in groups[keys[i]]] for p in parts]
    return DatasetSplit(*out, fractions=tuple(fractions))
