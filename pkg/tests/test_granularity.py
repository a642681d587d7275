import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mobsal.core import ExtractionConfig, Trajectory
from mobsal.granularity import (GranularityConfig, assign_all_granularities, kmeans_fit,
                                mean_stay_seconds, transition_counts)
from mobsal.pipeline import build_trajectories, generate_streams
from mobsal.synthgen import WorldConfig


def blobs(rng, centers, n=200, radius=1.0):
    pts, lab = [], []
    for k, c in enumerate(centers):
        pts.append(np.asarray(c) + rng.uniform(-radius, radius, size=(n, 2)))
        lab += [k] * n
    return np.vstack(pts), np.array(lab)


def test_single_cluster_is_the_mean():
    pts = np.random.default_rng(0).normal(size=(50, 2))
    fit = kmeans_fit(pts, 1)
    assert np.allclose(fit.centroids[0], pts.mean(0))


def test_separated_blobs_are_recovered():
    rng = np.random.default_rng(1)
    pts, truth = blobs(rng, [(0, 0), (10, 0)], radius=1.0)
    fit = kmeans_fit(pts, 2, rng=rng)
    # brute-force nearest-blob labelling, up to renaming
    agree = (fit.labels == truth).mean()
    assert agree in (0.0, 1.0)


def test_inertia_never_increases():
    rng = np.random.default_rng(2)
    pts = rng.uniform(0, 100, size=(2000, 2))
    fit = kmeans_fit(pts, 12, GranularityConfig(kmeans_restarts=1), rng)
    h = np.array(fit.inertia_history)
    assert np.all(np.diff(h) <= 1e-9 * h[0])


def test_fit_properties():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 10, size=(500, 2))
    fit = kmeans_fit(pts, 7, rng=np.random.default_rng(0))
    again = kmeans_fit(pts, 7, rng=np.random.default_rng(0))
    assert np.array_equal(fit.centroids, again.centroids) and np.array_equal(fit.labels, again.labels)
    sizes = np.bincount(fit.labels, minlength=7)
    assert np.all(np.diff(sizes) <= 0)
    d = ((pts[:, None, :] - fit.centroids[None]) ** 2).sum(-1)
    own = d[np.arange(len(pts)), fit.labels]
    assert np.all(own <= d.min(1) + 1e-9)


def test_too_few_distinct_points():
    with pytest.raises(ValueError, match="distinct"):
        kmeans_fit(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]), 3)


def test_weighted_unique_points_match_expanded_fit():
    rng = np.random.default_rng(4)
    base = rng.uniform(0, 10, size=(40, 2))
    counts = rng.integers(1, 5, size=40)
    expanded = np.repeat(base, counts, axis=0)
    cfg = GranularityConfig(kmeans_restarts=1)
    a = kmeans_fit(expanded, 4, cfg, np.random.default_rng(9))
    b = kmeans_fit(base, 4, cfg, np.random.default_rng(9), weights=counts)
    # same objective value on the expanded set
    d = ((expanded[:, None] - b.centroids[None]) ** 2).sum(-1).min(1).sum()
    assert np.isclose(b.inertia, d)
    assert a.inertia == pytest.approx(b.inertia, rel=0.25)


def test_config_validation():
    with pytest.raises(ValueError):
        GranularityConfig(m_values=(10, 5))
    with pytest.raises(ValueError):
        GranularityConfig(m_values=(1, 5))


def test_two_pairs_two_clusters():
    pts = np.array([[0, 0], [0, 0.1], [9, 9], [9, 9.1]])
    gm = assign_all_granularities(pts, GranularityConfig(m_values=(2,)))
    lab = gm.labels[2]
    assert lab[0] == lab[1] and lab[2] == lab[3] and lab[0] != lab[2]


def test_every_point_gets_every_granularity():
    pts = np.random.default_rng(5).uniform(0, 10, size=(300, 2))
    cfg = GranularityConfig(m_values=(2, 5, 10))
    gm = assign_all_granularities(pts, cfg)
    assert set(gm.labels) == {2, 5, 10}
    for m, lab in gm.labels.items():
        assert len(lab) == len(pts) and lab.max() < m
    rows = list(gm.centroid_rows())
    assert len(rows) == 17


def traj(locs, m=5):
    return Trajectory("u", np.arange(len(locs)) * 60, {m: locs})


def test_transition_example():
    A, B, C = 0, 1, 2
    tm = transition_counts([traj([A, A, B, B, C, A])], 5)
    expected = np.zeros((5, 5), int)
    expected[A, B] = expected[B, C] = expected[C, A] = 1
    assert np.array_equal(tm.counts, expected)
    assert not transition_counts([traj([3, 3, 3])], 5).counts.any()


def test_export_filter_leaves_internal_counts():
    tm = transition_counts([traj([0, 1, 0, 1, 0, 2])], 5)
    assert tm.counts[0, 2] == 1
    rows = list(tm.export_rows(min_count=2))
    assert rows == [(5, 0, 1, 2), (5, 1, 0, 2)]
    assert tm.counts[0, 2] == 1


@given(st.lists(st.lists(st.integers(0, 4), min_size=1, max_size=30), min_size=1, max_size=6))
def test_transition_rows_match_pairwise_scan(seqs):
    tm = transition_counts([traj(s) for s in seqs], 5)
    brute = np.zeros((5, 5), int)
    for s in seqs:
        for a, b in zip(s, s[1:]):
            if a != b:
                brute[a, b] += 1
    assert np.array_equal(tm.counts, brute)
    assert np.all(np.diag(tm.counts) == 0)


def test_mean_stay_shrinks_with_finer_granularity():
    cfg = WorldConfig(n_users=6, sim_days=6, n_sensors=8, random_sensors_per_tick=1)
    _, geo, _ = generate_streams(cfg)
    gcfg = GranularityConfig(m_values=(5, 10, 25, 50))
    gm = assign_all_granularities(geo.points(), gcfg, np.random.default_rng(0))
    trajs = build_trajectories(geo, gm, ExtractionConfig())
    stays = [mean_stay_seconds(trajs, m) for m in gcfg.m_values]
    assert all(a >= b for a, b in zip(stays, stays[1:]))
