"""Versioned INI run configuration; command-line flags override file values."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields
from typing import Dict

from .errors import ConfigError
from .label_gen import LabelGenConfig
from .model import ScreenTransformerConfig
from .nn import OptimizerConfig

CONFIG_VERSION = 1


@dataclass
class TrainingConfig:
    pretrain_steps: int = 500
    finetune_steps: int = 300
    layout_epochs: int = 200
    classifier_epochs: int = 500
    freeze_encoder: bool = False
    holdout_fraction: float = 0.2


@dataclass
class SeedConfig:
    fixtures: int = 0
    pretrain: int = 0
    finetune: int = 0
    classifier: int = 0


@dataclass
class RunConfig:
    paths: Dict[str, str] = field(default_factory=dict)
    label_gen: LabelGenConfig = field(default_factory=LabelGenConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    model: ScreenTransformerConfig = field(default_factory=ScreenTransformerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)

    def to_dict(self):
        return {
            "version": CONFIG_VERSION,
            "paths": dict(sorted(self.paths.items())),
            "label_gen": self.label_gen.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "model": self.model.to_dict(),
            "training": {f.name: getattr(self.training, f.name) for f in fields(TrainingConfig)},
            "seeds": {f.name: getattr(self.seeds, f.name) for f in fields(SeedConfig)},
        }


def _coerce(section, key, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, frozenset):
            return frozenset(p.strip() for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {type(default).__name__}") from None


def _section_values(parser, section, cls, defaults):
    if not parser.has_section(section):
        return {}
    known = {f.name for f in fields(cls)}
    out = {}
    for key, raw in parser.items(section):
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        out[key] = _coerce(section, key, raw, getattr(defaults, key))
    return out


_SECTIONS = {
    "label_gen": LabelGenConfig,
    "optimizer": OptimizerConfig,
    "model": ScreenTransformerConfig,
    "training": TrainingConfig,
    "seeds": SeedConfig,
}


def load_config(path=None) -> RunConfig:
    """Read an INI file; ``None`` gives the defaults.

    The file must carry ``[meta] version = 1``. Relative paths in ``[paths]``
    resolve against the file's directory.
    """
    if path is None:
        return RunConfig()
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    version = parser.get("meta", "version", fallback=None)
    if version is None:
        raise ConfigError(f"{path}: missing [meta] version")
    if version.strip() != str(CONFIG_VERSION):
        raise ConfigError(f"{path}: config version {version.strip()} is not supported "
                          f"(expected {CONFIG_VERSION})")
    for section in parser.sections():
        if section not in _SECTIONS and section not in ("meta", "paths"):
            raise ConfigError(f"{path}: unknown section [{section}]")
    built = {}
    for section, cls in _SECTIONS.items():
        defaults = cls()
        values = _section_values(parser, section, cls, defaults)
        try:
            built[section] = cls(**{**{f.name: getattr(defaults, f.name) for f in fields(cls)}, **values})
        except ValueError as exc:
            raise ConfigError(f"{path}: [{section}] {exc}") from None
    base = os.path.dirname(os.path.abspath(path))
    paths = {}
    if parser.has_section("paths"):
        for key, raw in parser.items("paths"):
            paths[key] = raw if os.path.isabs(raw) else os.path.join(base, raw)
    return RunConfig(paths=paths, **built)
