"""Accuracy@1, the random-guess baseline and the scenario report grid."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .querysim import TargetCriterion

DEFAULT_EXCLUDED_M = (5, 10)


def accuracy_at_1(predictions, labels) -> float:
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if len(p) != len(y) or len(p) == 0:
        raise ValueError("predictions and labels must have equal, non-zero length")
    return float((p == y).mean())


def random_guess_baseline(m: int) -> float:
    """Expected Accuracy@1 of a uniform guess among the m - 1 non-current locations."""
    if m < 2:
        raise ValueError("m must be >= 2")
    return 1.0 / (m - 1)


@dataclass(frozen=True)
class ScenarioResult:
    m: int
    criterion: TargetCriterion
    model_name: str
    accuracy_at_1: float
    n_test: int
    mean_target_stay_seconds: float
    groups: tuple = ()
    relative_perf: float | None = None

    def __post_init__(self):
        # NaN marks a scenario without test queries; it keeps the grid complete.
        if not (0.0 <= self.accuracy_at_1 <= 1.0 or np.isnan(self.accuracy_at_1)):
            raise ValueError("accuracy must lie in [0, 1]")
        if self.n_test < 0:
            raise ValueError("n_test must be >= 0")

    @property
    def groups_key(self) -> str:
        return "+".join(self.groups)


@dataclass
class ReportGrid:
    cells: dict  # (m, criterion name, model, groups key) -> ScenarioResult
    by_granularity: dict  # (model, groups key) -> {m: mean relative perf}
    by_criterion: dict  # (model, groups key) -> {criterion name: mean relative perf}
    excluded: tuple = DEFAULT_EXCLUDED_M

    def heatmap_rows(self):
        for key in sorted(self.by_granularity):
            label = key[0] if not key[1] else f"{key[0]}[{key[1]}]"
            for m, v in sorted(self.by_granularity[key].items()):
                yield "granularity", f"{label}|M={m}", v
        for key in sorted(self.by_criterion):
            label = key[0] if not key[1] else f"{key[0]}[{key[1]}]"
            for c, v in sorted(self.by_criterion[key].items()):
                yield "criterion", f"{label}|{c}", v


def build_report_grid(results, excluded=DEFAULT_EXCLUDED_M) -> ReportGrid:
    """Average relative performance per granularity and per criterion.

    Only cells carrying a relative performance take part, and granularities
    in ``excluded`` never contribute to either marginal.
    """
    cells = {}
    per_m = defaultdict(lambda: defaultdict(list))
    per_c = defaultdict(lambda: defaultdict(list))
    for r in results:
        cells[(r.m, r.criterion.name, r.model_name, r.groups_key)] = r
        if r.relative_perf is None or r.m in excluded:
            continue
        key = (r.model_name, r.groups_key)
        per_m[key][r.m].append(r.relative_perf)
        per_c[key][r.criterion.name].append(r.relative_perf)
    by_m = {k: {m: float(np.mean(v)) for m, v in d.items()} for k, d in per_m.items()}
    by_c = {k: {c: float(np.mean(v)) for c, v in d.items()} for k, d in per_c.items()}
    return ReportGrid(cells, by_m, by_c, tuple(excluded))
