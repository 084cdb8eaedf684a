"""Run configuration: one TOML file with a section per pipeline stage.

Unknown sections or keys are rejected so a typo never silently falls back to
a default.
"""

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError, SchemaViolation
from .graph import EdgeKeyRule, default_rules
from .ingest import ColumnSpec, default_schema, validate_schema
from .model import ModelConfig
from .preprocess import PreprocessConfig
from .synth import SynthConfig
from .train import TrainConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class EvalConfig:
    threshold: float = 0.5
    n_bins: int = 15

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        if self.n_bins < 1:
            raise ConfigError("n_bins must be >= 1")


@dataclass
class GraphConfig:
    rules: list = field(default_factory=default_rules)
    min_component_size: int = 1

    def __post_init__(self):
        self.rules = [r if isinstance(r, EdgeKeyRule) else _build(EdgeKeyRule, r, "graph.rules")
                      for r in self.rules]
        if self.min_component_size < 1:
            raise ConfigError("min_component_size must be >= 1")


@dataclass
class PathsConfig:
    transactions: str = None
    identity: str = None


@dataclass
class RunConfig:
    seed: int = 42
    schema: list = field(default_factory=default_schema)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["schema"] = [dataclasses.asdict(c) for c in self.schema]
        out["preprocess"]["split_fractions"] = list(self.preprocess.split_fractions)
        out["train"]["fanout"] = list(self.train.fanout)
        return out

    def with_seed(self, seed):
        """Copy with ``seed`` applied to every seeded section."""
        return dataclasses.replace(
            self, seed=seed,
            train=dataclasses.replace(self.train, seed=seed),
            synth=dataclasses.replace(self.synth, seed=seed))


SECTIONS = {
    "preprocess": PreprocessConfig,
    "graph": GraphConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
    "eval": EvalConfig,
    "paths": PathsConfig,
}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key {where}.{key}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def from_dict(data):
    """Build a RunConfig from parsed TOML/JSON data; unspecified values keep their defaults.

    A top-level ``seed`` applies to the train and synth sections unless they set their own.
    """
    data = dict(data)
    allowed = set(SECTIONS) | {"seed", "schema"}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key}")
    seed = data.get("seed", 42)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    kwargs = {"seed": seed}
    for name, cls in SECTIONS.items():
        section = dict(data.get(name, {}))
        if name in ("train", "synth"):
            section.setdefault("seed", seed)
        kwargs[name] = _build(cls, section, name)
    if "schema" in data:
        try:
            schema = [_build(ColumnSpec, c, "schema") for c in data["schema"]]
            validate_schema(schema)
        except SchemaViolation as exc:
            raise ConfigError(f"[schema]: {exc}") from None
        kwargs["schema"] = schema
    return RunConfig(**kwargs)


def load_config(path=None):
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(data)
