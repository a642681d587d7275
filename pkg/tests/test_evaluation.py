import math

import numpy as np
import pytest

from mobsal.evaluation import ScenarioResult, accuracy_at_1, build_report_grid, random_guess_baseline
from mobsal.granularity import GranularityConfig
from mobsal.pipeline import generate_streams, prepare, run_cell
from mobsal.querysim import ImportantAtK, LongestAtK, Successive
from mobsal.synthgen import WorldConfig


def test_accuracy_examples_and_recount():
    assert accuracy_at_1([4, 2], [4, 2]) == 1.0
    assert accuracy_at_1([1, 2, 3], [1, 0, 3]) == pytest.approx(2 / 3)
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 200))
        p, y = rng.integers(0, 4, n), rng.integers(0, 4, n)
        assert accuracy_at_1(p, y) == sum(int(a == b) for a, b in zip(p, y)) / n
    with pytest.raises(ValueError):
        accuracy_at_1([], [])
    with pytest.raises(ValueError):
        accuracy_at_1([1], [1, 2])


def test_random_baseline():
    assert random_guess_baseline(5) == 0.25
    assert random_guess_baseline(2) == 1.0
    with pytest.raises(ValueError):
        random_guess_baseline(1)
    rng = np.random.default_rng(1)
    m, n = 25, 100_000
    current = rng.integers(0, m, n)
    label = (current + rng.integers(1, m, n)) % m  # any location but the current one
    guess = (current + rng.integers(1, m, n)) % m
    assert abs((guess == label).mean() - random_guess_baseline(m)) < 0.01


def res(m, crit, rel, model="forest_over_logits", groups=("app",), acc=0.5):
    return ScenarioResult(m, crit, model, acc, 10, 600.0, groups, rel)


def test_result_validation():
    with pytest.raises(ValueError):
        res(25, Successive(), 1.0, acc=1.5)
    with pytest.raises(ValueError):
        ScenarioResult(25, Successive(), "lstm", 0.5, -1, 0.0)
    assert math.isnan(res(25, Successive(), None, acc=float("nan")).accuracy_at_1)


def test_single_cell_grid():
    grid = build_report_grid([res(25, Successive(), 1.3)])
    assert grid.by_granularity[("forest_over_logits", "app")] == {25: 1.3}
    assert grid.by_criterion[("forest_over_logits", "app")] == {"Successive": 1.3}
    assert list(grid.heatmap_rows()) == [("granularity", "forest_over_logits[app]|M=25", 1.3),
                                         ("criterion", "forest_over_logits[app]|Successive", 1.3)]


def test_excluded_granularities_never_count():
    base = [res(m, c, 1.0 + 0.01 * m + 0.1 * i) for m in (5, 10, 25, 50)
            for i, c in enumerate((Successive(), ImportantAtK(5)))]
    a = build_report_grid(base)
    perturbed = [res(r.m, r.criterion, 99.0) if r.m in (5, 10) else r for r in base]
    b = build_report_grid(perturbed)
    assert a.by_granularity == b.by_granularity and a.by_criterion == b.by_criterion
    assert set(a.by_granularity[("forest_over_logits", "app")]) == {25, 50}


def test_aggregates_match_hand_recount():
    rng = np.random.default_rng(2)
    crits = (Successive(), ImportantAtK(2), LongestAtK(5))
    results = [res(m, c, float(rng.uniform(0.5, 1.5)), groups=g)
               for m in (5, 10, 25, 50, 75) for c in crits for g in (("app",), ("app", "time"))]
    results.append(res(25, Successive(), None, model="lstm", groups=()))
    grid = build_report_grid(results)
    for g in ("app", "app+time"):
        key = ("forest_over_logits", g)
        for m in (25, 50, 75):
            vals = [r.relative_perf for r in results if r.m == m and r.groups_key == g and r.relative_perf]
            assert grid.by_granularity[key][m] == pytest.approx(sum(vals) / len(vals), abs=1e-12)
        for c in crits:
            vals = [r.relative_perf for r in results
                    if r.criterion == c and r.groups_key == g and r.m >= 25 and r.relative_perf]
            assert grid.by_criterion[key][c.name] == pytest.approx(sum(vals) / len(vals), abs=1e-12)
    assert ("lstm", "") not in grid.by_granularity


@pytest.fixture(scope="module")
def small_data():
    w = WorldConfig(n_users=5, sim_days=6, rng_seed=3)
    _, geo, _ = generate_streams(w)
    crits = (Successive(), ImportantAtK(2), ImportantAtK(5), LongestAtK(3), LongestAtK(5), LongestAtK(10))
    from mobsal.pipeline import QueryConfig
    return prepare(geo, 3, GranularityConfig(m_values=(10, 25)), query_cfg=QueryConfig(criteria=crits))


def test_cell_sizes_match_the_testing_size_table(small_data):
    for c in small_data.criteria:
        for m in small_data.m_values:
            results, _ = run_cell(small_data, c, m, models=("random", "markov"))
            for r in results:
                assert r.n_test == small_data.sizes.test_counts[(c, m)]


def test_longest_stay_grows_with_k_per_query(small_data):
    for m in small_data.m_values:
        stays = {k: {lq.query.query_id: lq.target_stay for lq in small_data.cells[(LongestAtK(k), m)]}
                 for k in (3, 5, 10)}
        common = set(stays[3]) & set(stays[5]) & set(stays[10])
        assert common
        for q in common:
            assert stays[3][q] <= stays[5][q] <= stays[10][q]
        means = [np.mean([stays[k][q] for q in common]) for k in (3, 5, 10)]
        assert means[0] <= means[1] <= means[2]
