"""Domain types, trajectory extraction and run-length stay segmentation.

Record streams are stored column-wise (one timestamp array plus one location
array per granularity) because a month of minute-cadence records for a few
dozen users is millions of rows.  ``LocationRecord`` objects are materialised
on demand for the record-level API.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_GRANULARITIES = (5, 10, 25, 50, 75, 100)


@dataclass(frozen=True)
class LocationRecord:
    timestamp: int
    location_ids: Mapping[int, int]

    def __post_init__(self):
        for m, loc in self.location_ids.items():
            if not 0 <= loc < m:
                raise ValueError(f"location id {loc} out of range for M={m}")


@dataclass(frozen=True)
class StaySegment:
    location: int
    enter: int
    leave: int

    @property
    def stay_seconds(self) -> int:
        return self.leave - self.enter


@dataclass(frozen=True)
class ExtractionConfig:
    gap_threshold: int = 300
    min_duration: int = 3600

    def __post_init__(self):
        if self.gap_threshold <= 0 or self.min_duration <= 0:
            raise ValueError("gap_threshold and min_duration must be positive")
        if self.min_duration < self.gap_threshold:
            raise ValueError("min_duration must be >= gap_threshold")


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """An ordered, immutable run of location records for one user.

    ``locations`` maps each granularity M to an integer array aligned with
    ``timestamps``.  The same type doubles as a raw per-user record stream
    before extraction.
    """

    user_id: object
    timestamps: np.ndarray
    locations: Mapping[int, np.ndarray]
    traj_id: int = -1
    offset: int = 0  # index of the first record inside the parent stream
    _m_values: tuple = field(init=False, repr=False)

    def __post_init__(self):
        ts = _frozen(self.timestamps, np.int64)
        locs = {int(m): _frozen(v, np.int64) for m, v in self.locations.items()}
        for m, v in locs.items():
            if v.shape != ts.shape:
                raise ValueError(f"location array for M={m} has wrong length")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "_m_values", tuple(sorted(locs)))

    @classmethod
    def from_records(cls, records: Sequence[LocationRecord], user_id=None, traj_id=-1):
        if not records:
            return cls(user_id, np.zeros(0, np.int64), {}, traj_id)
        keys = set(records[0].location_ids)
        for r in records:
            if set(r.location_ids) != keys:
                raise ValueError("granularity keys differ between records")
        ts = [r.timestamp for r in records]
        locs = {m: [r.location_ids[m] for r in records] for m in keys}
        return cls(user_id, ts, locs, traj_id)

    @property
    def m_values(self) -> tuple:
        return self._m_values

    @property
    def records(self) -> list[LocationRecord]:
        return [
            LocationRecord(int(t), {m: int(self.locations[m][i]) for m in self._m_values})
            for i, t in enumerate(self.timestamps)
        ]

    @property
    def duration(self) -> int:
        if len(self.timestamps) == 0:
            return 0
        return int(self.timestamps[-1] - self.timestamps[0])

    def __len__(self) -> int:
        return len(self.timestamps)

    def loc(self, m: int) -> np.ndarray:
        try:
            return self.locations[m]
        except KeyError:
            raise KeyError(f"granularity M={m} not present in records") from None

    def slice(self, start: int, stop: int, traj_id=None) -> "Trajectory":
        return Trajectory(
            self.user_id,
            self.timestamps[start:stop],
            {m: v[start:stop] for m, v in self.locations.items()},
            self.traj_id if traj_id is None else traj_id,
            self.offset + start,
        )


def _as_stream(records) -> Trajectory:
    if isinstance(records, Trajectory):
        return records
    return Trajectory.from_records(list(records))


def split_at_gaps(records, gap_threshold: int) -> list[Trajectory]:
    """Cut a sorted record stream at every gap strictly larger than the threshold."""
    stream = _as_stream(records)
    ts = stream.timestamps
    if len(ts) == 0:
        return []
    diffs = np.diff(ts)
    if np.any(diffs <= 0):
        raise ValueError("records must be sorted by strictly increasing timestamp")
    cuts = np.flatnonzero(diffs > gap_threshold) + 1
    bounds = np.concatenate([[0], cuts, [len(ts)]])
    return [stream.slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def extract_trajectories(records, cfg: ExtractionConfig = ExtractionConfig()) -> list[Trajectory]:
    """Split one user's record stream into trajectories.

    Pieces separated by gaps > ``cfg.gap_threshold`` become candidate
    trajectories; those shorter than ``cfg.min_duration`` are dropped.  Record
    content, including consecutive duplicate locations, is kept verbatim.
    """
    return [p for p in split_at_gaps(records, cfg.gap_threshold) if p.duration >= cfg.min_duration]


def run_lengths(timestamps: np.ndarray, locs: np.ndarray):
    """Vectorised run-length encoding: (locations, enter, leave) arrays.

    The final run is closed at the last record timestamp.
    """
    n = len(locs)
    if n == 0:
        raise ValueError("cannot segment an empty trajectory")
    starts = np.flatnonzero(np.concatenate([[True], locs[1:] != locs[:-1]]))
    enter = timestamps[starts]
    leave = np.empty_like(enter)
    leave[:-1] = timestamps[starts[1:]]
    leave[-1] = timestamps[-1]
    return locs[starts], enter, leave


def stay_segments(traj: Trajectory, m: int) -> list[StaySegment]:
    locs, enter, leave = run_lengths(traj.timestamps, traj.loc(m))
    return [StaySegment(int(l), int(a), int(b)) for l, a, b in zip(locs, enter, leave)]


def dedup(seq: Iterable[int]) -> list[int]:
    out: list[int] = []
    for x in seq:
        if not out or out[-1] != x:
            out.append(int(x))
    return out
