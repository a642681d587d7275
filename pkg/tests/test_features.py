import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from mobsal.core import Trajectory
from mobsal.features import EventStore, FeatureDims, aggregate_window, extract_features, hour_and_dow
from mobsal.querysim import Query
from mobsal.synthgen import APP, BROADCAST, SENSOR, EventLog

DIMS = FeatureDims(n_apps=9, n_sensors=4, n_broadcasts=5)
T0 = 1_700_000_000


def query(start=T0, n=10, split=6, user=1):
    t = Trajectory(user, start + 60 * np.arange(n), {5: np.zeros(n, np.int64)})
    return Query(t, split)


def log(rows):
    rows = sorted(rows, key=lambda r: (r[0], r[1], r[2], r[3]))
    cols = list(zip(*rows)) if rows else [[]] * 5
    return EventLog(np.array(cols[0], np.int64), np.array(cols[1], np.int64), np.array(cols[2], np.int64),
                    np.array(cols[3], np.int64), np.array(cols[4], float))


def feats(rows, q=None):
    return extract_features(q or query(), EventStore(log(rows), DIMS))


def test_empty_window():
    fv = feats([])
    assert not fv.app.any() and not fv.broadcast.any() and not fv.sensor.any()
    assert fv.time == hour_and_dow(T0) + hour_and_dow(T0 + 300)
    assert len(fv.app) == 9 and len(fv.sensor) == 4 and len(fv.broadcast) == 5


def test_single_app_use():
    fv = feats([(1, T0 + 60, APP, 3, 1.0)])
    assert fv.app.tolist() == [0, 0, 0, 1, 0, 0, 0, 0, 0]


def test_sensor_mean():
    fv = feats([(1, T0, SENSOR, 2, 1.0), (1, T0 + 120, SENSOR, 2, 3.0)])
    assert fv.sensor[2] == 2.0 and fv.sensor[[0, 1, 3]].tolist() == [0, 0, 0]


def test_window_edges_are_inclusive():
    q = query()
    start, end = q.window
    fv = feats([(1, start, APP, 0, 1.0), (1, end, APP, 1, 1.0), (1, end + 1, APP, 2, 1.0),
                (1, start - 1, APP, 4, 1.0), (2, start, APP, 5, 1.0)], q)
    assert np.flatnonzero(fv.app).tolist() == [0, 1]


events = st.lists(st.tuples(st.integers(1, 2), st.integers(T0 - 400, T0 + 900), st.sampled_from([APP, SENSOR, BROADCAST]),
                            st.integers(0, 3), st.floats(-50, 50, allow_nan=False)), max_size=60)


def naive(rows, user, start, end):
    app, sums, cnt, bc = [0] * 9, [0.0] * 4, [0] * 4, [0] * 5
    for u, t, k, i, v in rows:
        if u != user or not start <= t <= end:
            continue
        if k == APP:
            app[i] = 1
        elif k == SENSOR:
            sums[i] += v
            cnt[i] += 1
        else:
            bc[i] += 1
    return app, [s / c if c else 0.0 for s, c in zip(sums, cnt)], bc


@given(events, st.integers(1, 9))
def test_matches_full_scan(rows, split):
    q = query(split=split)
    fv = feats(rows, q)
    app, sensor, bc = naive(rows, 1, *q.window)
    assert fv.app.tolist() == app and fv.broadcast.tolist() == bc
    np.testing.assert_allclose(fv.sensor, sensor, rtol=1e-12, atol=1e-12)
    assert set(np.unique(fv.app)) <= {0, 1} and np.all(fv.broadcast >= 0) and np.all(np.isfinite(fv.sensor))


@given(events, events)
def test_events_outside_window_do_not_matter(rows, noise):
    q = query()
    start, end = q.window
    outside = [r for r in noise if not (r[0] == 1 and start <= r[1] <= end)]
    a, b = feats(rows, q), feats(rows + outside, q)
    assert np.array_equal(a.app, b.app) and np.array_equal(a.broadcast, b.broadcast)
    assert np.array_equal(a.sensor, b.sensor) and a.time == b.time


@given(events, st.integers(T0 - 400, T0 + 900))
def test_broadcast_counts_add_over_a_split(rows, cut):
    kind, index = np.array([r[2] for r in rows], np.int64), np.array([r[3] for r in rows], np.int64)
    ts, val = np.array([r[1] for r in rows], np.int64), np.array([r[4] for r in rows])
    w = lambda sel: aggregate_window(kind[sel], index[sel], val[sel], DIMS, 0, 0).broadcast  # noqa: E731
    whole = w(np.ones(len(rows), bool))
    assert np.array_equal(whole, w(ts <= cut) + w(ts > cut))


@given(events, st.data())
def test_duplicating_app_events_is_idempotent(rows, data):
    apps = [r for r in rows if r[2] == APP]
    dup = data.draw(st.lists(st.sampled_from(apps), max_size=5)) if apps else []
    assert np.array_equal(feats(rows).app, feats(rows + dup).app)


def test_index_beyond_configured_dimension_is_rejected():
    import pytest
    with pytest.raises(ValueError):
        EventStore(log([(1, T0, APP, 9, 1.0)]), DIMS)
