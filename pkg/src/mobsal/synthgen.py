"""Synthetic mobility world standing in for a private phone-sensing dataset.

Each user alternates between dwelling at an anchor point and travelling in a
straight line to the next one.  Usage events are emitted alongside: motion
sensors report whether the user is moving, and during every dwell one "dwell
app" is used repeatedly.  With probability ``feature_signal_strength`` that
app is a fixed function of the *next* anchor, which plants information that
the location history alone does not carry.

All randomness derives from ``WorldConfig.rng_seed`` through
``numpy.random.SeedSequence``; user ``i`` draws from the child sequence
``(rng_seed, i)`` so users can be generated independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

APP, SENSOR, BROADCAST = 0, 1, 2
KIND_NAMES = {APP: "app", SENSOR: "sensor", BROADCAST: "broadcast"}


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 50
    n_anchors_per_user: int = 6
    n_public_anchors: int = 30
    public_anchors_per_user: int = 4
    sim_days: int = 30
    record_cadence: int = 60
    plane_size: float = 100.0
    personal_spread: float = 12.0
    travel_speed: float = 0.15  # plane units per second
    dwell_lognormal_mu: float = 7.6  # ln(seconds); median dwell ~33 min
    dwell_lognormal_sigma: float = 0.8
    user_mu_jitter: float = 0.3
    user_sigma_jitter: float = 0.2
    transition_concentration: float = 0.5
    n_apps: int = 655
    n_sensors: int = 238
    n_broadcasts: int = 82
    n_motion_sensors: int = 4
    sensor_period: int = 300
    random_sensors_per_tick: int = 4
    app_repeat_period: int = 900
    background_app_rate: float = 1.0  # events per hour
    broadcast_rate: float = 1.0  # events per hour
    feature_signal_strength: float = 0.8
    gap_rate: float = 1 / 300  # per record
    gap_length_range: tuple = (600, 7200)
    rng_seed: int = 20240601

    def __post_init__(self):
        counts = ("n_users", "n_anchors_per_user", "sim_days", "record_cadence",
                  "n_apps", "n_sensors", "n_broadcasts")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.feature_signal_strength <= 1.0:
            raise ValueError("feature_signal_strength must lie in [0, 1]")
        if not 0.0 <= self.gap_rate <= 1.0:
            raise ValueError("gap_rate must lie in [0, 1]")
        if self.public_anchors_per_user > self.n_public_anchors:
            raise ValueError("public_anchors_per_user exceeds n_public_anchors")
        if self.n_motion_sensors > self.n_sensors:
            raise ValueError("n_motion_sensors exceeds n_sensors")

    @property
    def n_records_per_user(self) -> int:
        return self.sim_days * 86400 // self.record_cadence


@dataclass(frozen=True)
class GeoPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError("GeoPoint coordinates must be finite")


@dataclass(frozen=True)
class UsageEvent:
    user_id: int
    timestamp: int
    kind: str  # "app" | "sensor" | "broadcast"
    index: int
    value: float = 1.0


@dataclass
class GeoStream:
    """Column-wise geo points for many users, sorted by (user, timestamp)."""

    user: np.ndarray
    timestamp: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.timestamp)

    def take(self, mask_or_idx) -> "GeoStream":
        return GeoStream(self.user[mask_or_idx], self.timestamp[mask_or_idx],
                         self.x[mask_or_idx], self.y[mask_or_idx])

    def users(self) -> np.ndarray:
        return np.unique(self.user)

    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])


@dataclass
class EventLog:
    """Column-wise usage events sorted by (user, timestamp, kind, index)."""

    user: np.ndarray
    timestamp: np.ndarray
    kind: np.ndarray
    index: np.ndarray
    value: np.ndarray

    def __len__(self):
        return len(self.timestamp)

    def take(self, mask_or_idx) -> "EventLog":
        return EventLog(self.user[mask_or_idx], self.timestamp[mask_or_idx],
                        self.kind[mask_or_idx], self.index[mask_or_idx],
                        self.value[mask_or_idx])

    def __iter__(self) -> Iterator[UsageEvent]:
        for u, t, k, i, v in zip(self.user, self.timestamp, self.kind, self.index, self.value):
            yield UsageEvent(int(u), int(t), KIND_NAMES[int(k)], int(i), float(v))


@dataclass
class Visit:
    """Ground-truth dwell: global anchor id, dwell interval, next anchor, dwell app."""

    user: int
    anchor: int
    start: float
    end: float
    next_anchor: int
    app: int
    signal: bool


@dataclass
class World:
    config: WorldConfig
    anchors: np.ndarray  # (n_global_anchors, 2)
    coupling: np.ndarray  # global anchor id -> app index
    geo: GeoStream
    events: EventLog
    visits: list = field(default_factory=list)

    def dwell_seconds(self) -> np.ndarray:
        return np.array([v.end - v.start for v in self.visits])


def _world_rng(cfg: WorldConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 0xA11]))


def user_rng(cfg: WorldConfig, user: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, user]))


def _layout(cfg: WorldConfig):
    rng = _world_rng(cfg)
    public = rng.uniform(0, cfg.plane_size, size=(cfg.n_public_anchors, 2))
    homes = rng.uniform(0, cfg.plane_size, size=(cfg.n_users, 2))
    personal = homes[:, None, :] + rng.normal(0, cfg.personal_spread,
                                              size=(cfg.n_users, cfg.n_anchors_per_user, 2))
    personal[:, 0, :] = homes
    personal = np.clip(personal, 0, cfg.plane_size)
    anchors = np.vstack([public, personal.reshape(-1, 2)])
    n_global = len(anchors)
    perm = rng.permutation(cfg.n_apps)
    coupling = perm[np.arange(n_global) % cfg.n_apps]
    return anchors, coupling


def _user_anchor_ids(cfg: WorldConfig, user: int, rng: np.random.Generator) -> np.ndarray:
    own = cfg.n_public_anchors + user * cfg.n_anchors_per_user + np.arange(cfg.n_anchors_per_user)
    pub = rng.choice(cfg.n_public_anchors, size=cfg.public_anchors_per_user, replace=False)
    return np.concatenate([own, np.sort(pub)])


def _simulate_user(cfg: WorldConfig, user: int, anchors: np.ndarray, coupling: np.ndarray):
    rng = user_rng(cfg, user)
    ids = _user_anchor_ids(cfg, user, rng)
    k = len(ids)
    mu = cfg.dwell_lognormal_mu + rng.normal(0, cfg.user_mu_jitter) if cfg.user_mu_jitter else cfg.dwell_lognormal_mu
    sigma = cfg.dwell_lognormal_sigma * (np.exp(rng.normal(0, cfg.user_sigma_jitter))
                                         if cfg.user_sigma_jitter else 1.0)
    if k > 1:
        trans = rng.dirichlet(np.full(k - 1, cfg.transition_concentration), size=k)
        probs = np.zeros((k, k))
        for i in range(k):
            probs[i, np.arange(k) != i] = trans[i]
    else:
        probs = np.ones((1, 1))
    favourite_apps = rng.choice(cfg.n_apps, size=min(10, cfg.n_apps), replace=False)
    favourite_bc = rng.choice(cfg.n_broadcasts, size=min(6, cfg.n_broadcasts), replace=False)

    horizon = cfg.sim_days * 86400.0
    # piecewise-linear path: knots (time, x, y); dwell intervals recorded as visits
    knot_t, knot_x, knot_y = [], [], []
    visits: list[Visit] = []
    cur = 0
    t = 0.0
    pending = None
    while t < horizon:
        dwell = float(rng.lognormal(mu, sigma))
        nxt = int(rng.choice(k, p=probs[cur])) if k > 1 else 0
        signal = bool(rng.random() < cfg.feature_signal_strength)
        app = int(coupling[ids[nxt]]) if signal else int(rng.integers(cfg.n_apps))
        p = anchors[ids[cur]]
        knot_t += [t, t + dwell]
        knot_x += [p[0], p[0]]
        knot_y += [p[1], p[1]]
        visits.append(Visit(user, int(ids[cur]), t, min(t + dwell, horizon), int(ids[nxt]), app, signal))
        t += dwell
        q = anchors[ids[nxt]]
        t += float(np.hypot(*(q - p))) / cfg.travel_speed
        cur = nxt
        pending = q
    knot_t.append(t)
    knot_x.append(pending[0])
    knot_y.append(pending[1])

    n = cfg.n_records_per_user
    rec_t = np.arange(n, dtype=np.int64) * cfg.record_cadence
    kt = np.asarray(knot_t)
    xs = np.interp(rec_t, kt, knot_x)
    ys = np.interp(rec_t, kt, knot_y)

    ev_t, ev_k, ev_i, ev_v = [], [], [], []

    def emit(times, kind, idx, val):
        ev_t.append(np.asarray(times, dtype=np.int64))
        ev_k.append(np.full(len(ev_t[-1]), kind, dtype=np.int8))
        ev_i.append(np.broadcast_to(np.asarray(idx, dtype=np.int32), ev_t[-1].shape).copy())
        ev_v.append(np.broadcast_to(np.asarray(val, dtype=np.float64), ev_t[-1].shape).copy())

    for v in visits:
        times = np.arange(v.start, v.end, cfg.app_repeat_period)
        emit(np.floor(times), APP, v.app, 1.0)

    hours = horizon / 3600.0
    n_bg = rng.poisson(cfg.background_app_rate * hours)
    emit(np.sort(rng.integers(0, int(horizon), n_bg)), APP,
         rng.choice(favourite_apps, size=n_bg), 1.0)
    n_bc = rng.poisson(cfg.broadcast_rate * hours)
    emit(np.sort(rng.integers(0, int(horizon), n_bc)), BROADCAST,
         rng.choice(favourite_bc, size=n_bc), 1.0)
    # arrival at home raises broadcast 0 (e.g. charger connected)
    home_arrivals = [v.start for v in visits if v.anchor == ids[0] and v.start > 0]
    emit(np.floor(home_arrivals), BROADCAST, 0, 1.0)

    ticks = np.arange(0, int(horizon), cfg.sensor_period, dtype=np.int64)
    tx = np.interp(ticks, kt, knot_x)
    ty = np.interp(ticks, kt, knot_y)
    tx2 = np.interp(ticks + cfg.record_cadence, kt, knot_x)
    ty2 = np.interp(ticks + cfg.record_cadence, kt, knot_y)
    moving = (np.hypot(tx2 - tx, ty2 - ty) > 1e-9).astype(float)
    for s in range(cfg.n_motion_sensors):
        emit(ticks, SENSOR, s, moving * (1.0 + 0.5 * s) + rng.normal(0, 0.2, len(ticks)))
    n_other = cfg.n_sensors - cfg.n_motion_sensors
    if n_other > 0 and cfg.random_sensors_per_tick > 0:
        r = cfg.random_sensors_per_tick
        idx = cfg.n_motion_sensors + rng.integers(0, n_other, size=(len(ticks), r))
        emit(np.repeat(ticks, r), SENSOR, idx.ravel(), rng.normal(0, 1, size=len(ticks) * r))

    t_all = np.concatenate(ev_t)
    k_all = np.concatenate(ev_k)
    i_all = np.concatenate(ev_i)
    v_all = np.concatenate(ev_v)
    order = np.lexsort((i_all, k_all, t_all))
    events = (t_all[order], k_all[order], i_all[order], v_all[order])
    return rec_t, xs, ys, events, visits


def generate_world(cfg: WorldConfig) -> World:
    """Simulate every user; identical config gives bit-identical arrays."""
    anchors, coupling = _layout(cfg)
    geo_parts, ev_parts, visits = [], [], []
    for u in range(cfg.n_users):
        rec_t, xs, ys, (et, ek, ei, ev), vis = _simulate_user(cfg, u, anchors, coupling)
        geo_parts.append((np.full(len(rec_t), u, np.int64), rec_t, xs, ys))
        ev_parts.append((np.full(len(et), u, np.int64), et, ek, ei, ev))
        visits.extend(vis)
    geo = GeoStream(*(np.concatenate(c) for c in zip(*geo_parts)))
    events = EventLog(*(np.concatenate(c) for c in zip(*ev_parts)))
    return World(cfg, anchors, coupling, geo, events, visits)


def inject_gaps(stream: GeoStream, gap_rate: float, gap_length_range, rng: np.random.Generator) -> GeoStream:
    """Delete contiguous spans of records to mimic device-off periods.

    Records are scanned in order per user.  At each surviving record a gap
    starts with probability ``gap_rate``; it removes every record of that user
    whose timestamp falls in ``[t, t + L)`` with ``L`` drawn uniformly from the
    integer range ``gap_length_range`` (inclusive).  Scanning resumes at the
    first record after the gap.
    """
    if not 0.0 <= gap_rate <= 1.0:
        raise ValueError("gap_rate must lie in [0, 1]")
    lo, hi = int(gap_length_range[0]), int(gap_length_range[1])
    keep = np.ones(len(stream), dtype=bool)
    if gap_rate == 0 or len(stream) == 0:
        return stream.take(keep)
    bounds = np.flatnonzero(np.diff(stream.user)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [len(stream)]])
    for a, b in zip(starts, stops):
        ts = stream.timestamp[a:b]
        i = 0
        n = b - a
        while i < n:
            if rng.random() < gap_rate:
                length = int(rng.integers(lo, hi + 1))
                j = int(np.searchsorted(ts, ts[i] + length, side="left"))
                j = max(j, i + 1)
                keep[a + i:a + j] = False
                i = j
            else:
                i += 1
    return stream.take(keep)


def expected_gap_fraction(gap_rate: float, gap_length_range, cadence: int) -> float:
    """Long-run deleted fraction of the gap process on a fixed-cadence stream."""
    lo, hi = int(gap_length_range[0]), int(gap_length_range[1])
    lengths = np.arange(lo, hi + 1)
    k = np.maximum(np.ceil(lengths / cadence), 1).mean()
    return gap_rate * k / (gap_rate * k + (1.0 - gap_rate))
