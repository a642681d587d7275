"""The pipeline stages as operations on a run directory.

Layout of a run directory::

    config.cfg                      config echo (every later stage reads this)
    manifest.json                   RunManifest (hashes, statuses, seeds, version)
    generate/geo.csv, events.csv
    prepare/records.csv, centroids.csv, transitions.csv, mean_stay.csv,
            trajectories.csv, queries.csv, labeled_queries.csv,
            testing_size.csv, features_<group>.csv
    cells/<key>/results.csv, cell.json[, models/]
    results.csv, heatmap.csv, report.txt
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import io as mio
from . import neuralseq as ns
from .config import ConfigError, RunConfig, dump_config, load_config, parse_config
from .evaluation import build_report_grid
from .features import GROUPS, FeatureDims
from .fusion import TrainingAudit, partition_hash, save_fused
from .granularity import mean_stay_seconds, transition_counts
from .pipeline import (STREAM_GAPS, STREAM_KMEANS, STREAM_QUERIES, STREAM_SPLIT, PreparedData, cell_data,
                       generate_streams, prepare, run_cell, trajectories_from_columns)
from .querysim import DatasetSplit, LabeledQuery, Query, TargetCriterion, TestingSizeTable
from .runstore import (StageError, check_inputs, hash_files, locked_manifest, read_manifest,
                       record_stage)

CONFIG_FILE = "config.cfg"
GEO, EVENTS = "generate/geo.csv", "generate/events.csv"
PREP = {name: f"prepare/{name}.csv" for name in
        ("records", "centroids", "transitions", "mean_stay", "trajectories", "queries",
         "labeled_queries", "testing_size")}
FEATURES = [f"prepare/features_{g}.csv" for g in GROUPS]
RESULTS, HEATMAP, REPORT = "results.csv", "heatmap.csv", "report.txt"
MODEL_CHOICES = ("random", "markov", "lstm", "forest", "fusion")


# configuration

def resolve_config(run: Path, config_path=None, seed=None, stage="") -> RunConfig:
    """The run's config echo, checked against any config or seed given on the command line."""
    run = Path(run)
    echo = run / CONFIG_FILE
    text = echo.read_text() if echo.exists() else None
    try:
        base = parse_config(text) if text is not None else RunConfig()
    except ConfigError as exc:
        raise StageError("config_invalid", f"{CONFIG_FILE}: {exc}", stage) from exc
    try:
        cfg = load_config(config_path) if config_path is not None else base
        if seed is not None:
            cfg = cfg.with_seed(int(seed))
    except (ConfigError, OSError, ValueError) as exc:
        raise StageError("config_invalid", str(exc), stage) from exc
    if text is not None and dump_config(cfg) != text:
        raise StageError("config_mismatch", f"the given config or seed differs from {echo}", stage)
    return cfg


def _seeds(cfg: RunConfig) -> dict:
    s = cfg.seed
    return {"world": s, "train": cfg.train.rng_seed, "forest": cfg.forest.rng_seed,
            "streams": {"gaps": [s, STREAM_GAPS], "kmeans": [s, STREAM_KMEANS],
                        "queries": [s, STREAM_QUERIES], "split": [s, STREAM_SPLIT]}}


def init_run(run: Path, cfg: RunConfig) -> None:
    run = Path(run)
    text = dump_config(cfg)
    echo = run / CONFIG_FILE
    if echo.exists() and echo.read_text() != text:
        raise StageError("config_mismatch", f"{echo} holds a different config", "generate")
    if not echo.exists():
        with mio.atomic_open(echo) as fh:
            fh.write(text)
    with locked_manifest(run) as man:
        man.tool_version = __version__
        man.config = {"path": CONFIG_FILE, "sha256": mio.file_sha256(echo)}
        man.seeds = _seeds(cfg)


# generate and prepare

def cmd_generate(run, config_path=None, seed=None) -> RunConfig:
    run = Path(run)
    cfg = resolve_config(run, config_path, seed, "generate")
    init_run(run, cfg)
    _, geo, events = generate_streams(cfg.world)
    mio.write_geo(run / GEO, geo)
    mio.write_events(run / EVENTS, events)
    record_stage(run, "generate", hash_files(run, [CONFIG_FILE]), [GEO, EVENTS])
    return cfg


def cmd_prepare(run, config_path=None, seed=None) -> PreparedData:
    run = Path(run)
    cfg = resolve_config(run, config_path, seed, "prepare")
    inputs = check_inputs(run, "prepare", [CONFIG_FILE, GEO, EVENTS])
    geo = mio.read_geo(run / GEO)
    events = mio.read_events(run / EVENTS)
    try:
        data = prepare(geo, cfg.seed, cfg.granularity, cfg.extraction, cfg.query, events,
                       FeatureDims.from_world(cfg.world))
    except ValueError as exc:
        raise StageError("config_invalid", str(exc), "prepare") from exc
    mio.write_records(run / PREP["records"], geo.user, geo.timestamp, data.granularity.labels)
    mio.write_centroids(run / PREP["centroids"], data.granularity.centroid_rows())
    rows = []
    for m in data.m_values:
        rows.extend(transition_counts(data.trajectories, m).export_rows(cfg.eval.transition_min_count))
    mio.write_transitions(run / PREP["transitions"], rows)
    mio.write_mean_stay(run / PREP["mean_stay"],
                        {m: mean_stay_seconds(data.trajectories, m) for m in data.m_values})
    mio.write_rows(run / PREP["trajectories"],
                    ["trajectory_id", "user_id", "start_timestamp", "end_timestamp", "n_records"],
                    [(t.traj_id, t.user_id, int(t.timestamps[0]), int(t.timestamps[-1]), len(t))
                     for t in data.trajectories])
    mio.write_queries(run / PREP["queries"], data.queries, data.split.partition_of())
    mio.write_labeled(run / PREP["labeled_queries"], data.cells)
    mio.write_testing_size(run / PREP["testing_size"], data.sizes)
    mio.write_features(run / "prepare", data.features)
    record_stage(run, "prepare", inputs, list(PREP.values()) + FEATURES)
    return data


def load_prepared(run, cfg: RunConfig, stage="train") -> tuple[PreparedData, dict]:
    """Rebuild the in-memory dataset from the prepare stage's CSV outputs."""
    run = Path(run)
    declared = [CONFIG_FILE, PREP["records"], PREP["trajectories"], PREP["queries"],
                PREP["labeled_queries"], PREP["testing_size"]] + FEATURES
    inputs = check_inputs(run, stage, declared)
    user, ts, labels = mio.read_records(run / PREP["records"])
    trajs = trajectories_from_columns(user, ts, labels, cfg.extraction)
    meta = mio.read_frame(run / PREP["trajectories"], ["trajectory_id", "n_records"])
    if len(meta) != len(trajs) or any(len(t) != n for t, n in zip(trajs, meta.n_records)):
        raise StageError("hash_mismatch", "re-extracted trajectories disagree with trajectories.csv", stage)
    qdf = mio.read_queries(run / PREP["queries"])
    queries, parts = {}, {"train": [], "validation": [], "test": []}
    for r in qdf.itertuples():
        q = Query(trajs[r.trajectory_id], int(r.split_index), int(r.query_id))
        queries[q.query_id] = q
        parts[r.partition].append(q)
    split = DatasetSplit(parts["train"], parts["validation"], parts["test"], tuple(cfg.query.split_fractions))
    criteria = tuple(cfg.query.criteria)
    m_values = tuple(cfg.granularity.m_values)
    cells = {(c, m): [] for c in criteria for m in m_values}
    ldf = mio.read_labeled(run / PREP["labeled_queries"])
    stay = ldf["target_stay_s"].to_numpy(np.int64)
    for i, r in enumerate(ldf.itertuples()):
        c = mio.criterion_from_columns(r.criterion, r.k if r.k == r.k else 0)
        cells[(c, int(r.m))].append(LabeledQuery(queries[r.query_id], c, int(r.m), int(r.target), int(stay[i])))
    counts = mio.read_testing_size(run / PREP["testing_size"])
    sizes = TestingSizeTable(counts, {})
    data = PreparedData(trajs, None, list(queries.values()), split, cells, sizes, m_values, criteria,
                        mio.read_features(run / "prepare"))
    return data, inputs


# scenario cells

def cell_key(m: int, c: TargetCriterion) -> str:
    return f"m{m}_{c.kind}{c.k if c.kind != 'successive' else ''}"


def selection_for(cfg: RunConfig, models=None, keep_models=False) -> dict:
    """Which models a cell trains; ``models`` picks from MODEL_CHOICES (None: the sweep config)."""
    if models is None:
        base = list(cfg.sweep.models)
        return {"models": base, "single_groups": list(cfg.sweep.single_groups),
                "group_sets": [list(g) for g in cfg.sweep.group_sets],
                "fusion_variants": list(cfg.sweep.fusion_variants), "keep_models": keep_models}
    bad = [m for m in models if m not in MODEL_CHOICES]
    if bad:
        raise StageError("bad_argument", f"unknown model selector(s) {bad}; choose from {list(MODEL_CHOICES)}",
                         "train")
    return {"models": [m for m in ("random", "markov", "lstm") if m in models],
            "single_groups": list(cfg.sweep.single_groups) if "forest" in models else [],
            "group_sets": [list(g) for g in cfg.sweep.group_sets] if "fusion" in models else [],
            "fusion_variants": list(cfg.sweep.fusion_variants) if "fusion" in models else [],
            "keep_models": keep_models}


def expected_rows(selection: dict) -> int:
    return (len(selection["models"]) + len(selection["single_groups"])
            + len(selection["group_sets"]) * len(selection["fusion_variants"]))


def _input_hash(inputs: dict) -> str:
    return hashlib.sha256(json.dumps(inputs, sort_keys=True).encode()).hexdigest()


def _save_models(directory: Path, models: dict, cfg: RunConfig, partitions: dict):
    tmp = directory.with_name(directory.name + ".tmp")
    shutil.rmtree(tmp, ignore_errors=True)
    tmp.mkdir(parents=True)
    for key, model in models.items():
        if key == "markov":
            mio.save_markov(tmp / "markov", model)
        elif key == "lstm":
            ns.save_checkpoint(model, tmp / "lstm.ckpt", cfg.train)
        elif key[0] == "forest":
            model.save(tmp / f"forest_{key[1][0]}.json")
        else:
            variant, groups = key
            save_fused(model, tmp / f"{variant}_{'+'.join(groups)}", {"partitions": partitions})
    shutil.rmtree(directory, ignore_errors=True)
    tmp.rename(directory)


def compute_cell(run: Path, data: PreparedData, cfg: RunConfig, m: int, c: TargetCriterion,
                 selection: dict, input_hash: str) -> str:
    run = Path(run)
    key = cell_key(m, c)
    d = run / "cells" / key
    results, models = run_cell(data, c, m, models=tuple(selection["models"]),
                               group_sets=tuple(tuple(g) for g in selection["group_sets"]),
                               fusion_variants=tuple(selection["fusion_variants"]),
                               single_groups=tuple(selection["single_groups"]),
                               cfg=cfg.model_config(), audit=TrainingAudit(),
                               keep_models=selection["keep_models"])
    if selection["keep_models"]:
        cd = cell_data(data, c, m)
        parts = {p: partition_hash(cd.ids(p)) for p in ("train", "validation", "test")}
        _save_models(d / "models", models, cfg, parts)
    mio.write_results(d / "results.csv", results)
    info = {"m": m, "criterion": c.name, "selection": selection, "input_hash": input_hash}
    with mio.atomic_open(d / "cell.json") as fh:
        fh.write(json.dumps(info, indent=2, sort_keys=True) + "\n")
    outputs = hash_files(run, [f"cells/{key}/results.csv", f"cells/{key}/cell.json"])
    with locked_manifest(run) as man:
        man.cells[key] = {"status": "done", "selection": selection, "input_hash": input_hash,
                          "outputs": outputs}
    return key


def cell_state(run: Path, key: str, selection: dict, input_hash: str) -> str:
    """"missing", "stale" (other model selection) or "done"; raises on changed inputs."""
    d = Path(run) / "cells" / key
    res, meta = d / "results.csv", d / "cell.json"
    if not res.exists() or not meta.exists():
        return "missing"
    info = json.loads(meta.read_text())
    if info.get("input_hash") != input_hash:
        raise StageError("hash_mismatch", f"cell {key} was computed from different inputs", "sweep")
    man = read_manifest(run)
    entry = man.cells.get(key) if man else None
    if entry is None:
        return "missing"
    rel = f"cells/{key}/results.csv"
    if entry["outputs"].get(rel) != mio.file_sha256(res):
        raise StageError("hash_mismatch", f"{rel} changed since it was recorded", "sweep")
    return "done" if info.get("selection") == selection else "stale"


_WORKER: dict = {}


def _cell_worker(task):
    m, crit = task
    w = _WORKER
    return compute_cell(w["run"], w["data"], w["cfg"], m, crit, w["selection"], w["input_hash"])


def run_cells(run: Path, data: PreparedData, cfg: RunConfig, tasks, selection: dict, input_hash: str,
              jobs: int = 1) -> list[str]:
    """Compute cells, in parallel when jobs > 1 (forked workers share ``data``)."""
    tasks = list(tasks)
    if jobs <= 1 or len(tasks) <= 1:
        return [compute_cell(run, data, cfg, m, c, selection, input_hash) for m, c in tasks]
    _WORKER.update(run=run, data=data, cfg=cfg, selection=selection, input_hash=input_hash)
    try:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            return list(pool.map(_cell_worker, tasks))
    finally:
        _WORKER.clear()


def parse_scenario(text: str) -> tuple[int, TargetCriterion]:
    """``25:Successive`` or ``M=25:Important@5``."""
    head, sep, crit = text.partition(":")
    try:
        if not sep:
            raise ValueError
        m = int(head.split("=", 1)[-1])
        return m, TargetCriterion.parse(crit)
    except ValueError:
        raise StageError("bad_argument", f"cannot parse scenario {text!r}; expected M:Criterion",
                         "train") from None


def grid(cfg: RunConfig) -> list[tuple[int, TargetCriterion]]:
    return [(m, c) for m in cfg.sweep_m_values() for c in cfg.sweep_criteria()]


def _validate_scenarios(cfg: RunConfig, scenarios, stage):
    for m, c in scenarios:
        if m not in cfg.granularity.m_values:
            raise StageError("bad_argument", f"M={m} is not a configured granularity", stage)
        if c not in cfg.query.criteria:
            raise StageError("bad_argument", f"{c.name} is not a configured criterion", stage)


def cmd_train(run, models=None, scenarios=None, config_path=None, seed=None, jobs=1) -> list[str]:
    run = Path(run)
    cfg = resolve_config(run, config_path, seed, "train")
    selection = selection_for(cfg, models, keep_models=True)
    tasks = [parse_scenario(s) for s in scenarios] if scenarios else grid(cfg)
    _validate_scenarios(cfg, tasks, "train")
    data, inputs = load_prepared(run, cfg, "train")
    return run_cells(run, data, cfg, tasks, selection, _input_hash(inputs), jobs)


# evaluate, sweep, report

def cmd_evaluate(run, config_path=None, seed=None):
    run = Path(run)
    cfg = resolve_config(run, config_path, seed, "evaluate")
    rels = [f"cells/{cell_key(m, c)}/results.csv" for m, c in grid(cfg)]
    inputs = check_inputs(run, "evaluate", [CONFIG_FILE] + rels)
    results = []
    for rel in rels:
        results.extend(mio.read_results(run / rel))
    mio.write_results(run / RESULTS, results)
    report = build_report_grid(results, cfg.eval.excluded_m)
    mio.write_heatmap(run / HEATMAP, report)
    record_stage(run, "evaluate", inputs, [RESULTS, HEATMAP])
    return results, report


def _stage_done(run: Path, stage: str) -> bool:
    man = read_manifest(run)
    if man is None or man.stages.get(stage, {}).get("status") != "done":
        return False
    return all((run / p).exists() for p in man.stages[stage]["outputs"])


def cmd_sweep(run, config_path=None, seed=None, jobs=1, log=print) -> list[str]:
    """Run every missing stage and scenario cell, then evaluate; returns recomputed cell keys."""
    run = Path(run)
    cfg = resolve_config(run, config_path, seed, "sweep")
    if not _stage_done(run, "generate"):
        log("stage generate")
        cmd_generate(run, config_path, seed)
    if not _stage_done(run, "prepare"):
        log("stage prepare")
        cmd_prepare(run)
    selection = selection_for(cfg)
    data, inputs = load_prepared(run, cfg, "sweep")
    input_hash = _input_hash(inputs)
    todo = []
    for m, c in grid(cfg):
        state = cell_state(run, cell_key(m, c), selection, input_hash)
        log(f"cell {cell_key(m, c)} {'cached' if state == 'done' else 'queued'}")
        if state != "done":
            todo.append((m, c))
    done = run_cells(run, data, cfg, todo, selection, input_hash, jobs)
    cmd_evaluate(run)
    return done


def _table(header, rows) -> list[str]:
    rows = [[str(x) for x in r] for r in rows]
    widths = [max(len(str(h)), *(len(r[i]) for r in rows)) if rows else len(str(h)) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    return [fmt.format(*header)] + [fmt.format(*r) for r in rows]


def cmd_report(run, config_path=None, seed=None) -> str:
    run = Path(run)
    cfg = resolve_config(run, config_path, seed, "report")
    check_inputs(run, "report", [CONFIG_FILE, RESULTS, HEATMAP, PREP["mean_stay"], PREP["testing_size"]])
    lines = ["Mean stay per location (minutes)"]
    stay = mio.read_frame(run / PREP["mean_stay"], ["m", "mean_stay_s"])
    lines += _table(["M", "minutes"], [(int(r.m), f"{r.mean_stay_s / 60:.2f}") for r in stay.itertuples()])
    sizes = mio.read_frame(run / PREP["testing_size"], ["criterion", "k", "m", "count", "count_test"])
    ms = sorted(sizes.m.unique())
    lines += ["", "Labelled queries per scenario (all / test)"]
    by_cell = {(mio.criterion_from_columns(r.criterion, r.k if r.k == r.k else 0), int(r.m)):
               f"{r.count}/{r.count_test}" for r in sizes.itertuples()}
    rows = [[c.name] + [by_cell.get((c, m), "-") for m in ms] for c in cfg.query.criteria]
    lines += _table(["criterion"] + [f"M={m}" for m in ms], rows)
    results = mio.read_results(run / RESULTS)
    labels = list(dict.fromkeys((r.model_name, r.groups_key) for r in results))
    for c in cfg.sweep_criteria():
        lines += ["", f"Accuracy@1, {c.name}"]
        cell = {(r.model_name, r.groups_key, r.m): r.accuracy_at_1 for r in results if r.criterion == c}
        m_cols = [m for m in cfg.sweep_m_values()]
        rows = [[f"{n}[{g}]" if g else n] + [f"{cell[(n, g, m)]:.4f}" if (n, g, m) in cell else "-"
                                              for m in m_cols] for n, g in labels]
        lines += _table(["model"] + [f"M={m}" for m in m_cols], rows)
    heat = mio.read_frame(run / HEATMAP, ["axis", "key", "mean_relative_perf"])
    if len(heat):
        lines += ["", "Mean relative performance (fused / LSTM)"]
        lines += _table(["axis", "key", "mean"], [(r.axis, r.key, f"{r.mean_relative_perf:.4f}")
                                                   for r in heat.itertuples()])
    text = "\n".join(lines) + "\n"
    with mio.atomic_open(run / REPORT) as fh:
        fh.write(text)
    return text
