"""Behavioural feature groups aggregated over a query's history window."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .synthgen import APP, BROADCAST, SENSOR, EventLog

GROUPS = ("app", "sensor", "broadcast", "time")


@dataclass(frozen=True)
class FeatureDims:
    n_apps: int = 655
    n_sensors: int = 238
    n_broadcasts: int = 82

    @classmethod
    def from_world(cls, cfg):
        return cls(cfg.n_apps, cfg.n_sensors, cfg.n_broadcasts)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    app: np.ndarray  # uint8 {0, 1}
    sensor: np.ndarray  # float64
    broadcast: np.ndarray  # int64 counts
    time: tuple  # (begin_hour, begin_dow, end_hour, end_dow)

    def group(self, name: str) -> np.ndarray:
        if name == "time":
            return np.asarray(self.time, dtype=np.int64)
        return getattr(self, name)


def hour_and_dow(ts: int) -> tuple[int, int]:
    d = datetime.fromtimestamp(int(ts), tz=timezone.utc)
    return d.hour, d.weekday()


class EventStore:
    """Per-user, time-sorted event arrays for fast window queries."""

    def __init__(self, events: EventLog, dims: FeatureDims):
        self.dims = dims
        limits = {APP: dims.n_apps, SENSOR: dims.n_sensors, BROADCAST: dims.n_broadcasts}
        for kind, lim in limits.items():
            sel = events.index[events.kind == kind]
            if len(sel) and (sel.min() < 0 or sel.max() >= lim):
                raise ValueError(f"event index outside configured dimension for kind {kind}")
        self._by_user = {}
        users = events.user
        bounds = np.flatnonzero(np.diff(users)) + 1
        starts = np.concatenate([[0], bounds]) if len(users) else []
        stops = np.concatenate([bounds, [len(users)]]) if len(users) else []
        for a, b in zip(starts, stops):
            ts = events.timestamp[a:b]
            if np.any(np.diff(ts) < 0):
                raise ValueError("events must be sorted by timestamp within each user")
            self._by_user[int(users[a])] = (ts, events.kind[a:b], events.index[a:b], events.value[a:b])

    def window(self, user, start: int, end: int):
        data = self._by_user.get(int(user))
        if data is None:
            z = np.zeros(0, np.int64)
            return z, z, np.zeros(0)
        ts, kind, index, value = data
        a = np.searchsorted(ts, start, side="left")
        b = np.searchsorted(ts, end, side="right")
        return kind[a:b], index[a:b], value[a:b]


def aggregate_window(kind, index, value, dims: FeatureDims, start: int, end: int) -> FeatureVector:
    app = np.zeros(dims.n_apps, dtype=np.uint8)
    app[index[kind == APP]] = 1
    s = kind == SENSOR
    sums = np.bincount(index[s], weights=value[s], minlength=dims.n_sensors)
    n = np.bincount(index[s], minlength=dims.n_sensors)
    sensor = np.divide(sums, n, out=np.zeros(dims.n_sensors), where=n > 0)
    broadcast = np.bincount(index[kind == BROADCAST], minlength=dims.n_broadcasts).astype(np.int64)
    if len(app) != dims.n_apps or len(sensor) != dims.n_sensors or len(broadcast) != dims.n_broadcasts:
        raise ValueError("feature dimension mismatch")
    return FeatureVector(app, sensor, broadcast, hour_and_dow(start) + hour_and_dow(end))


def extract_features(query, store: EventStore) -> FeatureVector:
    """Aggregate app / sensor / broadcast / time features over the history window.

    The window is closed: ``[first history timestamp, last history timestamp]``.
    """
    start, end = query.window
    kind, index, value = store.window(query.trajectory.user_id, start, end)
    return aggregate_window(kind, index, value, store.dims, start, end)


@dataclass
class FeatureTable:
    """Stacked feature groups for many queries, row-aligned with ``query_ids``."""

    query_ids: np.ndarray
    app: np.ndarray
    sensor: np.ndarray
    broadcast: np.ndarray
    time: np.ndarray  # (n, 4) ints

    def group(self, name: str) -> np.ndarray:
        if name not in GROUPS:
            raise KeyError(f"unknown feature group {name!r}")
        return getattr(self, name)

    def rows(self, query_ids) -> "FeatureTable":
        pos = {int(q): i for i, q in enumerate(self.query_ids)}
        idx = np.array([pos[int(q)] for q in query_ids], dtype=np.int64)
        return FeatureTable(self.query_ids[idx], self.app[idx], self.sensor[idx],
                            self.broadcast[idx], self.time[idx])


def extract_feature_table(queries, store: EventStore) -> FeatureTable:
    d = store.dims
    n = len(queries)
    app = np.zeros((n, d.n_apps), np.uint8)
    sensor = np.zeros((n, d.n_sensors))
    broadcast = np.zeros((n, d.n_broadcasts), np.int64)
    time = np.zeros((n, 4), np.int64)
    for i, q in enumerate(queries):
        fv = extract_features(q, store)
        app[i], sensor[i], broadcast[i], time[i] = fv.app, fv.sensor, fv.broadcast, fv.time
    ids = np.array([q.query_id for q in queries], dtype=np.int64)
    return FeatureTable(ids, app, sensor, broadcast, time)
