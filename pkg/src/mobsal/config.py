"""Flat ``section.key = value`` run configuration shared by the CLI stages."""

from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .core import ExtractionConfig
from .forest import ForestConfig
from .fusion import DnnConfig
from .granularity import GranularityConfig
from .neuralseq import SequencePreprocessConfig, TrainConfig
from .pipeline import ModelConfig, QueryConfig
from .querysim import DEFAULT_CRITERIA, TargetCriterion
from .synthgen import WorldConfig


@dataclass(frozen=True)
class SweepConfig:
    models: tuple = ("random", "markov", "lstm")
    single_groups: tuple = ("app", "sensor", "broadcast", "time")
    group_sets: tuple = (("app",), ("sensor",), ("broadcast",), ("time",),
                         ("app", "sensor", "broadcast", "time"))
    fusion_variants: tuple = ("forest_over_logits",)
    m_values: tuple = ()  # empty: every configured granularity
    criteria: tuple = ()  # empty: every configured criterion


@dataclass(frozen=True)
class EvalConfig:
    excluded_m: tuple = (5, 10)
    transition_min_count: int = 5


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = WorldConfig()
    extraction: ExtractionConfig = ExtractionConfig()
    granularity: GranularityConfig = GranularityConfig()
    query: QueryConfig = QueryConfig()
    lstm: dict = field(default_factory=lambda: {"embed_dim": 32, "hidden_dim": 64})
    preprocess: SequencePreprocessConfig = SequencePreprocessConfig()
    train: TrainConfig = TrainConfig()
    forest: ForestConfig = ForestConfig()
    dnn: DnnConfig = DnnConfig()
    sweep: SweepConfig = SweepConfig()
    eval: EvalConfig = EvalConfig()

    @property
    def seed(self) -> int:
        return self.world.rng_seed

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.lstm["embed_dim"], self.lstm["hidden_dim"], self.train,
                           self.preprocess, self.forest, self.dnn)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, world=replace(self.world, rng_seed=seed),
                       train=replace(self.train, rng_seed=seed),
                       forest=replace(self.forest, rng_seed=seed))

    def sweep_m_values(self) -> tuple:
        return tuple(self.sweep.m_values) or tuple(self.granularity.m_values)

    def sweep_criteria(self) -> tuple:
        return tuple(self.sweep.criteria) or tuple(self.query.criteria)


SECTIONS = ("world", "extraction", "granularity", "query", "lstm", "preprocess", "train",
            "forest", "dnn", "sweep", "eval")


class ConfigError(ValueError):
    pass


def _format(value) -> str:
    if isinstance(value, TargetCriterion):
        return value.name
    if isinstance(value, tuple):
        if value and all(isinstance(v, tuple) for v in value):
            return "; ".join("+".join(v) for v in value)
        if not value:
            return ""
        return ", ".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_scalar(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if text in ("None", "none"):
            return None
        return text


def _parse(section: str, key: str, text: str, default):
    text = text.strip()
    if (section, key) == ("query", "criteria") or (section, key) == ("sweep", "criteria"):
        return tuple(TargetCriterion.parse(p) for p in text.split(",") if p.strip())
    if (section, key) == ("sweep", "group_sets"):
        return tuple(tuple(g.strip() for g in part.split("+") if g.strip())
                     for part in text.split(";") if part.strip())
    if isinstance(default, tuple):
        if not text:
            return ()
        return tuple(_parse_scalar(p.strip()) for p in text.split(","))
    if isinstance(default, bool):
        if text.lower() not in ("true", "false"):
            raise ConfigError(f"{section}.{key}: expected true/false, got {text!r}")
        return text.lower() == "true"
    value = _parse_scalar(text)
    if isinstance(default, float) and isinstance(value, int):
        value = float(value)
    return value


def _section_items(cfg: RunConfig, section: str):
    obj = getattr(cfg, section)
    if isinstance(obj, dict):
        return list(obj.items())
    return [(f.name, getattr(obj, f.name)) for f in fields(obj)]


def dump_config(cfg: RunConfig = RunConfig()) -> str:
    lines = ["# mobsal run configuration: section.key = value"]
    for section in SECTIONS:
        lines.append("")
        for key, value in _section_items(cfg, section):
            lines.append(f"{section}.{key} = {_format(value)}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: RunConfig = RunConfig()) -> RunConfig:
    updates: dict[str, dict] = {s: {} for s in SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        lhs, rhs = (p.strip() for p in line.split("=", 1))
        section, _, key = lhs.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigError(f"line {lineno}: unknown key {lhs!r}")
        defaults = dict(_section_items(base, section))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {lhs!r}")
        updates[section][key] = _parse(section, key, rhs, defaults[key])
    kwargs = {}
    try:
        for section, up in updates.items():
            current = getattr(base, section)
            if isinstance(current, dict):
                kwargs[section] = {**current, **up}
            elif up:
                kwargs[section] = dataclasses.replace(current, **up)
        return replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
