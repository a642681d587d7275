import dataclasses

import numpy as np
import pytest
from scipy import stats

from mobsal import io as mio
from mobsal.synthgen import (APP, SENSOR, GeoStream, WorldConfig, expected_gap_fraction,
                             generate_world, inject_gaps)

LIGHT = dict(n_sensors=8, random_sensors_per_tick=1)


def test_cadence_arithmetic():
    w = generate_world(WorldConfig(n_users=1, sim_days=1, record_cadence=60, **LIGHT))
    assert len(w.geo) == 1440
    assert np.all(np.diff(w.geo.timestamp) == 60)


def test_config_validation():
    with pytest.raises(ValueError):
        WorldConfig(n_users=0)
    with pytest.raises(ValueError):
        WorldConfig(feature_signal_strength=1.5)
    with pytest.raises(ValueError):
        WorldConfig(n_apps=0)


def test_same_seed_gives_identical_csv(tmp_path):
    cfg = WorldConfig(n_users=2, sim_days=2, **LIGHT)
    for run in ("a", "b"):
        w = generate_world(cfg)
        mio.write_geo(tmp_path / f"geo_{run}.csv", w.geo)
        mio.write_events(tmp_path / f"ev_{run}.csv", w.events)
    assert (tmp_path / "geo_a.csv").read_bytes() == (tmp_path / "geo_b.csv").read_bytes()
    assert (tmp_path / "ev_a.csv").read_bytes() == (tmp_path / "ev_b.csv").read_bytes()
    other = generate_world(dataclasses.replace(cfg, rng_seed=cfg.rng_seed + 1))
    assert not np.array_equal(other.geo.x, w.geo.x)


def test_outputs_are_well_formed():
    cfg = WorldConfig(n_users=3, sim_days=2, **LIGHT)
    w = generate_world(cfg)
    assert np.isfinite(w.geo.x).all() and np.isfinite(w.geo.y).all()
    ev = w.events
    for kind, lim in ((APP, cfg.n_apps), (SENSOR, cfg.n_sensors), (2, cfg.n_broadcasts)):
        sel = ev.index[ev.kind == kind]
        assert len(sel) and sel.min() >= 0 and sel.max() < lim
    # sorted by (user, timestamp)
    key = ev.user * 10**9 + ev.timestamp
    assert np.all(np.diff(key) >= 0)


def test_dwell_times_follow_the_lognormal():
    cfg = WorldConfig(n_users=12, sim_days=30, user_mu_jitter=0.0, user_sigma_jitter=0.0, **LIGHT)
    w = generate_world(cfg)
    horizon = cfg.sim_days * 86400
    dwell = np.array([v.end - v.start for v in w.visits if v.end < horizon])
    assert len(dwell) >= 10_000
    ks = stats.kstest(dwell, stats.lognorm(s=cfg.dwell_lognormal_sigma,
                                           scale=np.exp(cfg.dwell_lognormal_mu)).cdf)
    assert ks.statistic < 0.05


def test_no_signal_means_app_independent_of_next_anchor():
    cfg = WorldConfig(n_users=13, sim_days=30, feature_signal_strength=0.0, **LIGHT)
    w = generate_world(cfg)
    assert len(w.visits) >= 10_000
    table = np.zeros((8, 10))
    for v in w.visits:
        table[v.app * 8 // cfg.n_apps, v.next_anchor % 10] += 1
    assert stats.chi2_contingency(table).pvalue > 0.01


def test_full_signal_couples_app_to_next_anchor():
    cfg = WorldConfig(n_users=2, sim_days=3, feature_signal_strength=1.0, **LIGHT)
    w = generate_world(cfg)
    assert all(v.app == w.coupling[v.next_anchor] for v in w.visits)


def test_motion_sensor_separates_moving_from_dwelling():
    cfg = WorldConfig(n_users=2, sim_days=3, **LIGHT)
    w = generate_world(cfg)
    ev = w.events
    s0 = (ev.kind == SENSOR) & (ev.index == 0)
    vals = ev.value[s0]
    # two clusters: ~0 while dwelling, ~1 while moving
    assert (vals > 0.5).mean() > 0.01 and (vals < 0.5).mean() > 0.5


def _stream(n=14_400, cadence=60):
    ts = np.arange(n, dtype=np.int64) * cadence
    return GeoStream(np.zeros(n, np.int64), ts, ts.astype(float), ts.astype(float))


def test_zero_gap_rate_is_identity():
    s = _stream(500)
    out = inject_gaps(s, 0.0, (600, 7200), np.random.default_rng(0))
    assert np.array_equal(out.timestamp, s.timestamp) and np.array_equal(out.x, s.x)


def test_full_span_gap_empties_the_stream():
    s = _stream(500)
    span = 500 * 60
    assert len(inject_gaps(s, 1.0, (span, span), np.random.default_rng(0))) == 0


def test_gap_fraction_matches_expectation():
    rate, span = 1 / 300, (600, 7200)
    s = _stream()
    fracs = [1 - len(inject_gaps(s, rate, span, np.random.default_rng(seed))) / len(s) for seed in range(100)]
    expected = expected_gap_fraction(rate, span, 60)
    assert abs(np.mean(fracs) - expected) <= 0.1 * expected


def test_gaps_respect_user_boundaries():
    a, b = _stream(300), _stream(300)
    both = GeoStream(np.r_[a.user, b.user + 1], np.r_[a.timestamp, b.timestamp], np.r_[a.x, b.x],
                     np.r_[a.y, b.y])
    out = inject_gaps(both, 0.05, (600, 1200), np.random.default_rng(1))
    for u in (0, 1):
        assert np.all(np.diff(out.timestamp[out.user == u]) > 0)
