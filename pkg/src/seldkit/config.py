"""Run configuration: dataclass sections loaded from an INI file.

Example ``run.ini``::

    [data]
    train_dir = data/train
    test_dir = data/test

    [model]
    variant = AV
    fusion = cmaf
    embed_dim = 128

    [optim]
    base_lr = 3e-4
    batch_size = 32
    epochs = 50

    [augment]
    avcs = true

    [run]
    seed = 0
    output_dir = runs/cmaf
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .labels import DecodeConfig
from .model import ModelConfig


class ConfigFileError(ValueError):
    pass


@dataclass
class DataConfig:
    train_dir: str = ""
    test_dir: str = ""
    pretrain_dir: str = ""
    chunk_seconds: float = 3.0
    train_hop: float = 0.5
    test_hop: float = 3.0

    def __post_init__(self):
        if self.train_hop <= 0 or self.test_hop <= 0 or self.chunk_seconds <= 0:
            raise ConfigFileError("chunk length and hops must be positive")


@dataclass
class OptimConfig:
    base_lr: float = 3e-4
    batch_size: int = 32
    epochs: int = 50
    hold_epochs: int = 30
    decay: float = 0.95
    max_steps: int = 0  # 0: no cap
    pretrain_epochs: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigFileError("batch_size must be at least 1")
        if not 1e-4 <= self.base_lr <= 1e-3:
            raise ConfigFileError(f"base_lr {self.base_lr} outside the supported range [1e-4, 1e-3]")


@dataclass
class AugmentConfig:
    avcs: bool = False


@dataclass
class RunSection:
    seed: int = 0
    output_dir: str = ""
    pretrain: bool = False


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    run: RunSection = field(default_factory=RunSection)

    @property
    def seed(self) -> int:
        return self.run.seed

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section in dataclasses.fields(self):
            obj = getattr(self, section.name)
            parser[section.name] = {
                f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)
            }
        lines = []
        for name in parser.sections():
            lines.append(f"[{name}]")
            lines += [f"{k} = {v}" for k, v in parser[name].items()]
            lines.append("")
        return "\n".join(lines)


def _format(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def _coerce(raw: str, hint, where: str):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if origin is tuple:
            item = typing.get_args(hint)[0]
            return tuple(item(p) for p in raw.replace(",", " ").split()) if raw else ()
    except ValueError as exc:
        raise ConfigFileError(f"{where}: {exc}") from exc
    return raw


def _build(cls, values: dict[str, str], section: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigFileError(f"[{section}] unknown keys: {sorted(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"[{section}] {k}") for k, v in values.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(f"[{section}] {exc}") from exc


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Read an INI file (optional) and apply ``section.key=value`` overrides."""
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).exists():
            raise FileNotFoundError(f"config file not found: {path}")
        parser.read(path)
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigFileError(f"override must look like section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser[section][name] = value
    sections = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    hints = typing.get_type_hints(RunConfig)
    unknown = set(parser.sections()) - set(sections)
    if unknown:
        raise ConfigFileError(f"unknown sections: {sorted(unknown)}")
    built = {
        name: _build(hints[name], dict(parser[name]) if parser.has_section(name) else {}, name)
        for name in sections
    }
    return RunConfig(**built)
