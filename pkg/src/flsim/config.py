"""Experiment configuration and its ``key=value`` text format.

One assignment per line, dotted section keys, ``#`` starts a comment::

    workers = 10
    attack.kind = gaussian
    attack.byzantine_ids = 8,9
    attack.sigma = 20
    aggregator.kind = legato

Lists are comma separated; booleans are ``true``/``false``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple[int, ...] = (32,)
    activation: str = "relu"


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    num_classes: int = 10
    dims: int = 20
    samples_per_class: int = 300
    separation: float = 4.0
    test_fraction: float = 0.2
    partition: str = "iid"
    per_worker: int = 100
    idx_images: str = ""
    idx_labels: str = ""


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "none"
    byzantine_ids: tuple[int, ...] = ()
    mu: float = 0.0
    sigma: float = 20.0
    epsilon: float = 0.001


@dataclass(frozen=True)
class AggregatorConfig:
    kind: str = "mean"
    f: int = 0
    multi_k: int = 1
    log_size: int = 10
    scheme: str = "sum"


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    learning_rate: float = 0.05
    rho: float = 0.95
    epsilon: float = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 20
    max_rounds: int = 100
    eval_every: int = 10


@dataclass(frozen=True)
class OutputConfig:
    # wall-clock columns break byte-identical reruns, so they are opt-in
    timing: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    workers: int = 10
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    # ------------------------------------------------------------ dotted access

    def to_flat(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for sub in dataclasses.fields(value):
                    out[f"{f.name}.{sub.name}"] = _plain(getattr(value, sub.name))
            else:
                out[f.name] = _plain(value)
        return out

    @classmethod
    def from_flat(cls, flat: dict) -> ExperimentConfig:
        cfg = cls()
        for key, value in flat.items():
            cfg = cfg.with_value(key, value)
        return cfg

    def with_value(self, key: str, value) -> ExperimentConfig:
        """Copy with one dotted key replaced; strings are coerced to the field type."""
        parts = key.strip().split(".")
        if len(parts) == 1:
            current = _lookup(self, parts[0], key)
            return dataclasses.replace(self, **{parts[0]: _coerce(value, current, key)})
        if len(parts) != 2:
            raise ConfigError(f"unknown config key {key!r}")
        section = _lookup(self, parts[0], key)
        if not dataclasses.is_dataclass(section):
            raise ConfigError(f"unknown config key {key!r}")
        current = _lookup(section, parts[1], key)
        new_section = dataclasses.replace(section, **{parts[1]: _coerce(value, current, key)})
        return dataclasses.replace(self, **{parts[0]: new_section})

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_flat().items())

    def validate(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.train.max_rounds < 1:
            raise ConfigError("train.max_rounds must be at least 1")
        if self.train.eval_every < 1:
            raise ConfigError("train.eval_every must be at least 1")
        if self.train.batch_size < 1:
            raise ConfigError("train.batch_size must be at least 1")
        if self.train.batch_size > self.data.per_worker:
            raise ConfigError("train.batch_size exceeds data.per_worker")
        if self.aggregator.log_size < 1:
            raise ConfigError("aggregator.log_size must be at least 1")
        if self.data.source not in ("synthetic", "idx"):
            raise ConfigError(f"unknown data.source {self.data.source!r}")
        if self.data.partition not in ("iid", "label_skew"):
            raise ConfigError(f"unknown data.partition {self.data.partition!r}")
        if self.attack.kind == "none" and self.attack.byzantine_ids:
            raise ConfigError("attack.byzantine_ids must be empty when attack.kind = none")
        if self.attack.kind != "none" and not self.attack.byzantine_ids:
            raise ConfigError(f"attack.kind = {self.attack.kind} needs attack.byzantine_ids")


def _lookup(obj, name, key):
    if name not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {key!r}")
    return getattr(obj, name)


def _plain(value):
    return list(value) if isinstance(value, tuple) else value


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def _coerce(value, current, key):
    try:
        if isinstance(current, bool):
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return text in ("true", "1", "yes")
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            if isinstance(value, (list, tuple)):
                return tuple(int(v) for v in value)
            text = str(value).strip()
            return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r} for {key}") from None


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        try:
            cfg = cfg.with_value(key.strip(), value.strip())
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return cfg


def load_config(path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    return apply_overrides(cfg, overrides)


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        cfg = cfg.with_value(key.strip(), value.strip())
    return cfg
