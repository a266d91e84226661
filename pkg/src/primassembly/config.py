"""Layered run configuration: defaults, then a YAML/JSON file, then dotted overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .data import GeneratorConfig
from .exceptions import ConfigError, PrimAssemblyError
from .inference import SamplingConfig
from .metrics import EvalConfig
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class DataSection:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    count: int = 64
    n_points: int = 2048
    id_prefix: str = "syn"
    external_points: bool = False


@dataclass
class PathsSection:
    dataset: str | None = None
    checkpoint: str | None = None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSection = field(default_factory=DataSection)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsSection = field(default_factory=PathsSection)
    seed: int = 0

    def to_dict(self):
        return asdict(self)


def _default(f):
    return f.default_factory() if f.default_factory is not MISSING else f.default


def _schema(cls):
    """Nested dict of dataclass field names; leaves map to their default value."""
    out = {}
    for f in fields(cls):
        default = _default(f)
        out[f.name] = _schema(type(default)) if hasattr(default, "__dataclass_fields__") else default
    return out


def _merge(base, update, path=""):
    for key, value in update.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' must be a mapping")
            _merge(base[key], value, where)
        else:
            base[key] = value
    return base


def _build(cls, data, path=""):
    kwargs = {}
    for f in fields(cls):
        value = data[f.name]
        default = _default(f)
        if hasattr(default, "__dataclass_fields__"):
            value = _build(type(default), value, f"{path}{f.name}.")
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except PrimAssemblyError as exc:
        raise ConfigError(f"{path.rstrip('.') or 'config'}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path.rstrip('.') or 'config'}: {exc}") from None


def load_config_file(path):
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse config ({exc})") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def parse_override(key, text):
    """``("train.learning_rate", "3e-4")`` to ``{"train": {"learning_rate": 0.0003}}``."""
    value = yaml.safe_load(text) if isinstance(text, str) else text
    if isinstance(value, str):
        # YAML 1.1 reads "3e-4" as a string
        try:
            value = float(value)
        except ValueError:
            pass
    nested = value
    for part in reversed(key.split(".")):
        if not part:
            raise ConfigError(f"malformed override key '{key}'")
        nested = {part: nested}
    return nested


def resolve_config(file_path=None, overrides=()) -> RunConfig:
    """Merge defaults, an optional config file and ``(dotted_key, value)`` overrides."""
    data = copy.deepcopy(_schema(RunConfig))
    if file_path is not None:
        _merge(data, load_config_file(file_path))
    for key, text in overrides:
        _merge(data, parse_override(key, text))
    return _build(RunConfig, data)


def dump_config(cfg: RunConfig, path):
    Path(path).write_text(yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=False))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
