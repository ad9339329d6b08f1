"""YAML run configuration.

Every section maps onto a dataclass, so defaults are always materialized and
unknown keys are rejected with their dotted path and line number.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .evaluation import BenchConfig
from .pipeline import METHODS, PipelineConfig, canonical_method
from .simulator import ScenarioConfig


class ConfigError(ValueError):
    pass


@dataclass
class ComparisonConfig:
    methods: tuple[str, ...] = METHODS
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        self.methods = tuple(canonical_method(m) for m in self.methods)
        if not self.methods or not self.seeds:
            raise ValueError("methods and seeds must be non-empty")


@dataclass
class RunConfig:
    seed: int = 0
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    comparison: ComparisonConfig = field(default_factory=ComparisonConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def with_seed(self, seed: int) -> RunConfig:
        """Copy with ``seed`` pushed into every seeded section."""
        p = self.pipeline
        pipeline = dataclasses.replace(p, sh_seed=seed, ransac=dataclasses.replace(p.ransac, seed=seed))
        return dataclasses.replace(self, seed=seed,
                                   scenario=dataclasses.replace(self.scenario, seed=seed),
                                   pipeline=pipeline)


def _line(node) -> str:
    return f"line {node.start_mark.line + 1}"


def _scalar(value, tp, path, node):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        tp = next(a for a in args if a is not type(None))
        origin, args = typing.get_origin(tp), typing.get_args(tp)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path} ({_line(node)}): expected a list")
        inner = args[0]
        return tuple(_scalar(v, inner, path, n) for v, n in zip(value, node.value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path} ({_line(node)}): expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} ({_line(node)}): expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} ({_line(node)}): expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path} ({_line(node)}): expected a string")
        return value
    return value


def _build(cls, node, path: str):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{path or 'config'} ({_line(node)}): expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for knode, vnode in node.value:
        key = knode.value
        dotted = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown key {dotted!r} ({_line(knode)})")
        if key in kwargs:
            raise ConfigError(f"duplicate key {dotted!r} ({_line(knode)})")
        tp = hints[key]
        if dataclasses.is_dataclass(tp):
            kwargs[key] = _build(tp, vnode, dotted)
        else:
            kwargs[key] = _scalar(yaml.safe_load(yaml.serialize(vnode)), tp, dotted, vnode)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path or 'config'} ({_line(node)}): {exc}") from exc


def parse_config(text: str) -> RunConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(str(exc)) from exc
    if root is None:
        return RunConfig()
    cfg = _build(RunConfig, root, "")
    # a top-level seed seeds every section that does not set its own
    explicit = {k.value for k, _ in root.value}
    if "seed" in explicit:
        seeded = cfg.with_seed(cfg.seed)
        sections = {k.value: v for k, v in root.value}
        if _sets(sections.get("scenario"), "seed"):
            seeded.scenario = cfg.scenario
        if _sets(sections.get("pipeline"), "sh_seed"):
            seeded.pipeline.sh_seed = cfg.pipeline.sh_seed
        if _sets(_child(sections.get("pipeline"), "ransac"), "seed"):
            seeded.pipeline.ransac = cfg.pipeline.ransac
        cfg = seeded
    return cfg


def _child(node, key):
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            if k.value == key:
                return v
    return None


def _sets(node, key) -> bool:
    return _child(node, key) is not None


def load_config(path) -> RunConfig:
    try:
        return parse_config(Path(path).read_text())
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_to_dict(cfg) -> dict:
    def plain(v):
        return [plain(x) for x in v] if isinstance(v, tuple) else v

    return {k: (config_to_dict(v) if dataclasses.is_dataclass(v) else plain(v))
            for k, v in ((f.name, getattr(cfg, f.name)) for f in dataclasses.fields(cfg))}
