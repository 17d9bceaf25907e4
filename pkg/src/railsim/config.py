"""YAML configuration with strict key checking.

Precedence, lowest to highest: built-in defaults, the config file, command
line flags. Unknown keys anywhere in the file are rejected so typos never
pass silently.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .buckets import BucketSpec, default_bucket_specs
from .commentary import CommentaryConfig
from .dreamer import DreamerConfig
from .dynamics import DynamicsConfig, PidConfig
from .exceptions import ConfigError
from .metrics import ComfortThresholds, PenaltyTable, TerminationLimits

CONFIG_VERSION = 1


@dataclass(frozen=True)
class MetricsConfig:
    penalties: PenaltyTable = field(default_factory=PenaltyTable)
    comfort: ComfortThresholds = field(default_factory=ComfortThresholds)
    comfort_mode: str = "mean"
    termination: TerminationLimits = field(default_factory=TerminationLimits)
    slope_per: str = "second"
    early_stop_threshold: Optional[float] = None
    early_stop_steer_eps: float = 0.01

    def __post_init__(self):
        if self.comfort_mode not in ("mean", "max"):
            raise ValueError("comfort_mode must be 'mean' or 'max'")
        if self.slope_per not in ("second", "step"):
            raise ValueError("slope_per must be 'second' or 'step'")


@dataclass(frozen=True)
class BucketsConfig:
    seed: int = 0
    specs: tuple = field(default_factory=lambda: tuple(default_bucket_specs()))


@dataclass(frozen=True)
class IoConfig:
    jobs: int = 1
    chunksize: int = 16

    def __post_init__(self):
        if self.jobs < 1 or self.chunksize < 1:
            raise ValueError("jobs and chunksize must be >= 1")


@dataclass(frozen=True)
class Config:
    version: int = CONFIG_VERSION
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    dreamer: DreamerConfig = field(default_factory=DreamerConfig)
    commentary: CommentaryConfig = field(default_factory=CommentaryConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    buckets: BucketsConfig = field(default_factory=BucketsConfig)
    io: IoConfig = field(default_factory=IoConfig)


def _build(template, data, where):
    """Overlay mapping ``data`` onto dataclass instance ``template``, recursing into nested dataclasses."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(template)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    changes = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        current = getattr(template, key)
        if dataclasses.is_dataclass(current):
            changes[key] = _build(current, value, path)
        elif key == "specs" and isinstance(template, BucketsConfig):
            changes[key] = tuple(_bucket_spec(v, f"{path}[{i}]") for i, v in enumerate(value or ()))
        elif isinstance(current, tuple) and isinstance(value, list):
            changes[key] = tuple(value)
        else:
            changes[key] = value
    try:
        return dataclasses.replace(template, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def _bucket_spec(data, where):
    if not isinstance(data, dict) or "name" not in data:
        raise ConfigError(f"{where}: bucket spec needs a name")
    unknown = sorted(set(data) - {"name", "predicate", "weight"})
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return BucketSpec(str(data["name"]), dict(data.get("predicate") or {}), float(data.get("weight", 1.0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data) -> Config:
    data = dict(data or {})
    version = data.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}, expected {CONFIG_VERSION}")
    return _build(Config(), data, "")


def load_config(path=None) -> Config:
    """Read a YAML config file; ``None`` gives the defaults."""
    if path is None:
        return Config()
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    return config_from_dict(data)


def config_to_dict(cfg) -> dict:
    """Plain-data view of a config, suitable for ``yaml.safe_dump``."""
    out = dataclasses.asdict(cfg)
    out["buckets"]["specs"] = [dataclasses.asdict(s) for s in cfg.buckets.specs]
    out["dreamer"]["modes"] = list(cfg.dreamer.modes)
    for key in ("lane_start_range", "lane_length_range"):
        out["dreamer"][key] = list(out["dreamer"][key])
    return out


__all__ = [
    "Config", "MetricsConfig", "BucketsConfig", "IoConfig", "PidConfig",
    "load_config", "config_from_dict", "config_to_dict", "CONFIG_VERSION",
]
