"""CSV readers and writers for every on-disk table, plus atomic file replacement.

Floats that must round-trip exactly (coordinates, sensor values) are written
with 17 significant digits and read back with pandas' round-trip parser.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from .evaluation import ScenarioResult
from .features import GROUPS, FeatureTable
from .markov import MarkovModel
from .querysim import TargetCriterion
from .synthgen import KIND_NAMES, EventLog, GeoStream

FULL = "%.17g"
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}


@contextlib.contextmanager
def atomic_open(path, mode="w"):
    """Write to a sibling temp file and rename it over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_frame(path, df: pd.DataFrame, float_format=FULL):
    with atomic_open(path) as fh:
        df.to_csv(fh, index=False, float_format=float_format, lineterminator="\n")


def read_frame(path, required) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=[""])
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ValueError(f"{Path(path).name}: missing columns {missing}")
    return df


def write_rows(path, header, rows):
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# geo and usage streams

def write_geo(path, geo: GeoStream):
    _write_frame(path, pd.DataFrame({"user_id": geo.user, "timestamp": geo.timestamp, "x": geo.x, "y": geo.y}))


def read_geo(path) -> GeoStream:
    df = read_frame(path, ["user_id", "timestamp", "x", "y"])
    return GeoStream(df.user_id.to_numpy(np.int64), df.timestamp.to_numpy(np.int64),
                     df.x.to_numpy(float), df.y.to_numpy(float))


def write_events(path, ev: EventLog):
    kinds = np.array([KIND_NAMES[k] for k in range(len(KIND_NAMES))], dtype=object)[ev.kind]
    _write_frame(path, pd.DataFrame({"user_id": ev.user, "timestamp": ev.timestamp, "kind": kinds,
                                     "index": ev.index, "value": ev.value}))


def read_events(path) -> EventLog:
    df = read_frame(path, ["user_id", "timestamp", "kind", "index", "value"])
    unknown = set(df.kind.unique()) - set(KIND_CODES)
    if unknown:
        raise ValueError(f"unknown event kinds {sorted(unknown)}")
    kind = df.kind.map(KIND_CODES).to_numpy(np.int64)
    return EventLog(df.user_id.to_numpy(np.int64), df.timestamp.to_numpy(np.int64), kind,
                    df["index"].to_numpy(np.int64), df.value.to_numpy(float))


# labelled record streams

def write_records(path, user, timestamp, labels: dict):
    cols = {"user_id": user, "timestamp": timestamp}
    for m in sorted(labels):
        cols[f"loc_m{m}"] = labels[m]
    _write_frame(path, pd.DataFrame(cols))


def read_records(path):
    """Returns (user, timestamp, {M: location ids}) with M taken from the header."""
    df = read_frame(path, ["user_id", "timestamp"])
    labels = {}
    for col in df.columns:
        if col.startswith("loc_m"):
            labels[int(col[5:])] = df[col].to_numpy(np.int64)
    if not labels:
        raise ValueError(f"{Path(path).name}: no loc_m<M> columns")
    return df.user_id.to_numpy(np.int64), df.timestamp.to_numpy(np.int64), labels


# granularity exports

def write_centroids(path, rows):
    rows = list(rows)
    _write_frame(path, pd.DataFrame(rows, columns=["m", "cluster_id", "x", "y"]))


def write_transitions(path, rows):
    write_rows(path, ["m", "from", "to", "count"], rows)


def read_transitions(path) -> dict:
    """{M: dense count matrix}; the matrix size is inferred from the largest id."""
    df = read_frame(path, ["m", "from", "to", "count"])
    out = {}
    for m, g in df.groupby("m", sort=True):
        mat = np.zeros((int(m), int(m)), np.int64)
        mat[g["from"].to_numpy(), g["to"].to_numpy()] = g["count"].to_numpy()
        out[int(m)] = mat
    return out


def write_mean_stay(path, stays: dict):
    write_rows(path, ["m", "mean_stay_s"], [(m, repr(float(v))) for m, v in sorted(stays.items())])


# markov model: transition rows plus one global_dist row

def save_markov(directory, model: MarkovModel):
    d = Path(directory)
    rows = [(model.m, int(i), int(j), int(model.counts[i, j])) for i, j in zip(*np.nonzero(model.counts))]
    write_transitions(d / "transitions.csv", rows)
    write_rows(d / "global_dist.csv", ["m"] + [f"loc_{i}" for i in range(model.m)],
                [[model.m] + [int(v) for v in model.global_dist]])


def load_markov(directory) -> MarkovModel:
    d = Path(directory)
    g = read_frame(d / "global_dist.csv", ["m"])
    m = int(g.m.iloc[0])
    glob = g[[f"loc_{i}" for i in range(m)]].to_numpy(np.int64)[0]
    counts = read_transitions(d / "transitions.csv").get(m, np.zeros((m, m), np.int64))
    return MarkovModel(m, counts, glob)


# queries and labels

def criterion_columns(c: TargetCriterion):
    return c.name.split("@")[0], ("" if c.kind == "successive" else c.k)


def criterion_from_columns(name: str, k) -> TargetCriterion:
    if name == "Successive":
        return TargetCriterion("successive")
    return TargetCriterion.parse(f"{name}@{int(k)}")


def write_queries(path, queries, partition_of: dict):
    write_rows(path, ["query_id", "trajectory_id", "split_index", "partition"],
                [(q.query_id, q.trajectory_id, q.split_index, partition_of[q.query_id]) for q in queries])


def read_queries(path) -> pd.DataFrame:
    return read_frame(path, ["query_id", "trajectory_id", "split_index", "partition"])


def write_labeled(path, cells: dict):
    rows = []
    for (c, m), lqs in cells.items():
        name, k = criterion_columns(c)
        for lq in lqs:
            q = lq.query
            rows.append((q.query_id, q.trajectory_id, q.split_index, m, name, k, lq.target, lq.target_stay))
    write_rows(path, ["query_id", "trajectory_id", "split_index", "m", "criterion", "k", "target",
                       "target_stay_s"], rows)


def read_labeled(path) -> pd.DataFrame:
    return read_frame(path, ["query_id", "trajectory_id", "split_index", "m", "criterion", "k", "target"])


def write_testing_size(path, table):
    rows = []
    for c, m, n, n_test in table.rows():
        name, k = criterion_columns(c)
        rows.append((name, k, m, n, n_test))
    write_rows(path, ["criterion", "k", "m", "count", "count_test"], rows)


def read_testing_size(path) -> dict:
    df = read_frame(path, ["criterion", "k", "m", "count"])
    return {(criterion_from_columns(r.criterion, r.k), int(r.m)): int(r.count) for r in df.itertuples()}


# feature matrices: one file per group keyed by query_id

def feature_path(directory, group: str) -> Path:
    return Path(directory) / f"features_{group}.csv"


def write_features(directory, table: FeatureTable):
    for g in GROUPS:
        mat = table.group(g)
        names = (["begin_hour", "begin_dow", "end_hour", "end_dow"] if g == "time"
                 else [f"{g}_{i}" for i in range(mat.shape[1])])
        df = pd.DataFrame(mat, columns=names)
        df.insert(0, "query_id", table.query_ids)
        _write_frame(feature_path(directory, g), df)


def read_features(directory) -> FeatureTable:
    mats, ids = {}, None
    for g in GROUPS:
        df = read_frame(feature_path(directory, g), ["query_id"])
        q = df.query_id.to_numpy(np.int64)
        if ids is None:
            ids = q
        elif not np.array_equal(ids, q):
            raise ValueError(f"features_{g}.csv rows are not aligned with the other groups")
        mats[g] = df.drop(columns="query_id").to_numpy()
    return FeatureTable(ids, mats["app"].astype(np.uint8), mats["sensor"].astype(float),
                        mats["broadcast"].astype(np.int64), mats["time"].astype(np.int64))


# results and heatmap

RESULT_HEADER = ["m", "criterion", "k", "model", "groups", "n_test", "accuracy", "relative_perf",
                 "mean_target_stay_s"]


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def result_rows(results):
    for r in results:
        name, k = criterion_columns(r.criterion)
        yield (r.m, name, k, r.model_name, r.groups_key, r.n_test, _fmt(r.accuracy_at_1),
               _fmt(r.relative_perf), _fmt(r.mean_target_stay_seconds))


def write_results(path, results):
    write_rows(path, RESULT_HEADER, result_rows(results))


def read_results(path) -> list[ScenarioResult]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_HEADER:
            raise ValueError(f"{Path(path).name}: unexpected header {reader.fieldnames}")
        for row in reader:
            out.append(ScenarioResult(
                int(row["m"]), criterion_from_columns(row["criterion"], row["k"] or 0), row["model"],
                float(row["accuracy"]), int(row["n_test"]), float(row["mean_target_stay_s"]),
                tuple(g for g in row["groups"].split("+") if g),
                float(row["relative_perf"]) if row["relative_perf"] else None))
    return out


def write_heatmap(path, grid):
    write_rows(path, ["axis", "key", "mean_relative_perf"],
                [(a, k, repr(float(v))) for a, k, v in grid.heatmap_rows()])
