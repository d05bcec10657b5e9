"""Run configuration: JSON in, strictly validated dataclasses out.

Unknown keys anywhere in the document are rejected so typos cannot
silently fall back to defaults.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .gan import GanConfig
from .nncore.errors import ConfigError
from .relnet import RelnetTrainConfig


@dataclass
class CorpusConfig:
    path: str = "corpus"
    classes: int = 3
    per_class: int = 200


@dataclass
class ClassifierSection:
    steps: int = 250
    batch: int = 32
    learning_rate: float = 1e-3
    feature_dim: int = 64


@dataclass
class MetricsConfig:
    ndb_k: int = 10
    ndb_alpha: float = 0.05
    is_splits: int = 1
    sync_tolerance_frames: int = 2
    encoding_table: bool = True


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 7
    guidance: bool = True
    compare_unguided: bool = False
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    relnet: RelnetTrainConfig = field(default_factory=RelnetTrainConfig)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    gan: GanConfig = field(default_factory=GanConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def __post_init__(self):
        if self.profile not in ("desk", "paper"):
            raise ConfigError(f"unknown profile '{self.profile}'")

    def to_dict(self):
        return dataclasses.asdict(self)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {f.name: data[f.name] for f in dataclasses.fields(cls) if f.name in data}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_SECTIONS = {
    "corpus": CorpusConfig,
    "relnet": RelnetTrainConfig,
    "classifier": ClassifierSection,
    "gan": GanConfig,
    "metrics": MetricsConfig,
}


def run_config_from_dict(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return run_config_from_dict(data)
