"""In-memory orchestration of the analysis: world -> locations -> queries -> labels -> models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neuralseq as ns
from .core import ExtractionConfig, Trajectory, extract_trajectories
from .evaluation import ScenarioResult, accuracy_at_1, random_guess_baseline
from .features import EventStore, FeatureDims, FeatureTable, extract_feature_table
from .forest import ForestConfig, forest_fit
from .fusion import DnnConfig, TrainingAudit, fusion_fit, relative_performance
from .granularity import GranularityConfig, GranularityModel, assign_all_granularities
from .markov import markov_fit, markov_predict
from .querysim import (DEFAULT_CRITERIA, DatasetSplit, TargetCriterion, TestingSizeTable,
                       grouped_split, label_dataset, simulate_queries)
from .synthgen import EventLog, GeoStream, WorldConfig, generate_world, inject_gaps

STREAM_GAPS, STREAM_KMEANS, STREAM_QUERIES, STREAM_SPLIT = 1, 2, 3, 4


def stage_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


@dataclass(frozen=True)
class QueryConfig:
    n_per_traj: int = 5
    min_frac: float = 0.2
    split_fractions: tuple = (0.7, 0.1, 0.2)
    criteria: tuple = DEFAULT_CRITERIA


def generate_streams(cfg: WorldConfig):
    """Synthetic geo stream (with device-off gaps applied) and usage events."""
    world = generate_world(cfg)
    geo = inject_gaps(world.geo, cfg.gap_rate, cfg.gap_length_range, stage_rng(cfg.rng_seed, STREAM_GAPS))
    return world, geo, world.events


def build_trajectories(geo: GeoStream, gm: GranularityModel, cfg: ExtractionConfig) -> list[Trajectory]:
    """Per-user record streams carrying every granularity, cut into trajectories."""
    return trajectories_from_columns(geo.user, geo.timestamp, gm.labels, cfg)


def trajectories_from_columns(user, timestamp, labels: dict, cfg: ExtractionConfig) -> list[Trajectory]:
    """Same as ``build_trajectories`` but from plain (user, timestamp, {M: ids}) columns."""
    out: list[Trajectory] = []
    if len(timestamp) == 0:
        return out
    bounds = np.flatnonzero(np.diff(user)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [len(timestamp)]])
    for a, b in zip(starts, stops):
        stream = Trajectory(int(user[a]), timestamp[a:b],
                            {m: lab[a:b] for m, lab in labels.items()}, offset=int(a))
        for piece in extract_trajectories(stream, cfg):
            out.append(piece.slice(0, len(piece), traj_id=len(out)))
    return out


@dataclass
class PreparedData:
    trajectories: list
    granularity: GranularityModel
    queries: list
    split: DatasetSplit
    cells: dict  # (criterion, m) -> [LabeledQuery]
    sizes: TestingSizeTable
    m_values: tuple
    criteria: tuple
    features: FeatureTable | None = None
    extras: dict = field(default_factory=dict)

    @property
    def test_ids(self) -> set:
        return {q.query_id for q in self.split.test}


def prepare(geo: GeoStream, seed: int, gran_cfg: GranularityConfig = GranularityConfig(),
            ext_cfg: ExtractionConfig = ExtractionConfig(), query_cfg: QueryConfig = QueryConfig(),
            events: EventLog | None = None, dims: FeatureDims | None = None) -> PreparedData:
    gm = assign_all_granularities(geo.points(), gran_cfg, stage_rng(seed, STREAM_KMEANS))
    trajs = build_trajectories(geo, gm, ext_cfg)
    rng = stage_rng(seed, STREAM_QUERIES)
    queries = []
    for t in trajs:
        queries.extend(simulate_queries(t, query_cfg.n_per_traj, query_cfg.min_frac, rng, first_id=len(queries)))
    split = grouped_split(queries, query_cfg.split_fractions, stage_rng(seed, STREAM_SPLIT))
    test_ids = {q.query_id for q in split.test}
    cells, sizes = label_dataset(queries, query_cfg.criteria, gran_cfg.m_values, test_ids)
    data = PreparedData(trajs, gm, queries, split, cells, sizes, tuple(gran_cfg.m_values),
                        tuple(query_cfg.criteria))
    if events is not None:
        data.features = extract_feature_table(queries, EventStore(events, dims or FeatureDims()))
    return data


@dataclass
class CellData:
    """Labelled queries of one (criterion, M) scenario, partitioned."""

    m: int
    criterion: TargetCriterion
    train: list
    validation: list
    test: list

    def seqs(self, part: str, pre: ns.SequencePreprocessConfig) -> list:
        return [ns.preprocess_sequence(lq.query.trajectory.loc(self.m)[:lq.query.split_index], pre)
                for lq in getattr(self, part)]

    def labels(self, part: str) -> np.ndarray:
        return np.array([lq.target for lq in getattr(self, part)], dtype=np.int64)

    def ids(self, part: str) -> np.ndarray:
        return np.array([lq.query.query_id for lq in getattr(self, part)], dtype=np.int64)


def cell_data(data: PreparedData, criterion: TargetCriterion, m: int) -> CellData:
    part = data.split.partition_of()
    buckets = {"train": [], "validation": [], "test": []}
    for lq in data.cells[(criterion, m)]:
        buckets[part[lq.query.query_id]].append(lq)
    return CellData(m, criterion, buckets["train"], buckets["validation"], buckets["test"])


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 32
    hidden_dim: int = 64
    train: ns.TrainConfig = ns.TrainConfig()
    preprocess: ns.SequencePreprocessConfig = ns.SequencePreprocessConfig()
    forest: ForestConfig = ForestConfig()
    dnn: DnnConfig = DnnConfig()


def _mean_stay(lqs) -> float:
    return float(np.mean([lq.target_stay for lq in lqs])) if lqs else float("nan")


def run_cell(data: PreparedData, criterion: TargetCriterion, m: int, models=("random", "markov", "lstm"),
             group_sets=(), fusion_variants=("forest_over_logits",), single_groups=(),
             cfg: ModelConfig = ModelConfig(), audit: TrainingAudit | None = None,
             keep_models: bool = False):
    """Train and score every requested model on one scenario; returns ScenarioResults.

    ``single_groups`` trains a forest on one feature group alone; each entry of
    ``group_sets`` is a tuple of groups fused with the LSTM by each variant in
    ``fusion_variants``.
    """
    cd = cell_data(data, criterion, m)
    audit = audit if audit is not None else TrainingAudit()
    results, models_out = [], {}
    n_test = len(cd.test)
    stay = _mean_stay(cd.test)
    y_test = cd.labels("test")

    def add(name, acc, groups=(), rel=None):
        results.append(ScenarioResult(m, criterion, name, acc, n_test, stay, tuple(groups), rel))

    if n_test == 0 or not cd.train:
        names = [n for n in ("random", "markov", "lstm") if n in models]
        for name in names:
            add(name, float("nan"))
        for g in single_groups:
            add("forest", float("nan"), (g,))
        for groups in group_sets:
            for variant in fusion_variants:
                add(variant, float("nan"), groups)
        return results, models_out
    if "random" in models:
        add("random", random_guess_baseline(m))
    if "markov" in models:
        audit.record("markov", cd.ids("train"))
        mk = markov_fit([lq.query.trajectory.loc(m)[:lq.query.split_index] for lq in cd.train], m)
        cur = [lq.query.current_location[m] for lq in cd.test]
        add("markov", accuracy_at_1([markov_predict(mk, c) for c in cur], y_test))
        models_out["markov"] = mk
    need_lstm = "lstm" in models or group_sets
    lstm_acc = None
    if need_lstm:
        pre = cfg.preprocess
        tr = list(zip(cd.seqs("train", pre), cd.labels("train").tolist()))
        va = list(zip(cd.seqs("validation", pre), cd.labels("validation").tolist()))
        audit.record("lstm", cd.ids("train"))
        init = ns.LstmClassifier.init(m, cfg.embed_dim, cfg.hidden_dim,
                                      rng=np.random.default_rng(cfg.train.rng_seed), seed=cfg.train.rng_seed)
        lstm, _ = ns.train(init, tr, va, cfg.train)
        test_seqs = cd.seqs("test", pre)
        lstm_pred = ns.argmax_smallest(ns.predict_logits(lstm, test_seqs))
        lstm_acc = accuracy_at_1(lstm_pred, y_test)
        if "lstm" in models:
            add("lstm", lstm_acc)
        models_out["lstm"] = lstm
    if single_groups or group_sets:
        if data.features is None:
            raise ValueError("feature groups requested but no features were extracted")
        f_train = data.features.rows(cd.ids("train"))
        f_test = data.features.rows(cd.ids("test"))
    for g in single_groups:
        audit.record(f"forest:{g}", cd.ids("train"))
        fm = forest_fit(np.asarray(f_train.group(g), float), cd.labels("train"), cfg.forest, n_classes=m)
        add("forest", accuracy_at_1(fm.predict(np.asarray(f_test.group(g), float)), y_test), (g,))
        if keep_models:
            models_out[("forest", (g,))] = fm
    for groups in group_sets:
        f_val = data.features.rows(cd.ids("validation"))
        for variant in fusion_variants:
            fused = fusion_fit(variant, cd.seqs("train", cfg.preprocess), f_train, cd.labels("train"), m,
                               groups=groups, pretrained=models_out["lstm"],
                               val_seqs=cd.seqs("validation", cfg.preprocess), val_features=f_val,
                               val_labels=cd.labels("validation"), train_cfg=cfg.train, dnn_cfg=cfg.dnn,
                               forest_cfg=cfg.forest, embed_dim=cfg.embed_dim, hidden_dim=cfg.hidden_dim,
                               audit=audit)
            acc = accuracy_at_1(fused.predict(test_seqs, f_test), y_test)
            add(variant, acc, groups, relative_performance(acc, lstm_acc))
            if keep_models:
                models_out[(variant, tuple(groups))] = fused
    audit.assert_no_leakage(cd.ids("test"))
    return results, models_out
