"""Toolkit configuration: one INI file, validated on load.

Sections mirror the modules::

    [features]   FeatureConfig fields
    [corpus]     CorpusConfig fields
    [model]      preset, arch, and ArchConfig overrides (layers, hidden)
    [train]      TrainConfig fields
    [run]        seed, jobs

Tuples are comma-separated, ``none`` clears an optional value. Unknown
sections or keys are errors. ``PITMIX_SEED`` in the environment overrides
``run.seed``.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from .corpus import CorpusConfig
from .features import FeatureConfig
from .models import ARCHS, PRESETS, ArchConfig
from .train import TrainConfig

SEED_ENV = "PITMIX_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    preset: str = "desk"
    arch: str = "A3_DirectPitCE"
    layers: Optional[int] = None
    hidden: Optional[int] = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; choose from {ARCHS}")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")


@dataclass(frozen=True)
class ToolkitConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunSection = field(default_factory=RunSection)

    @property
    def seed(self) -> int:
        return self.run.seed

    def arch_config(self, arch: Optional[str] = None) -> ArchConfig:
        """Model shape: preset, then overrides; streams and label count follow the corpus."""
        overrides: Dict[str, Any] = {"num_streams": self.corpus.num_streams,
                                     "num_labels": self.corpus.num_labels,
                                     "feat_dim": self.features.n_mels}
        if self.model.layers is not None:
            overrides["layers"] = self.model.layers
        if self.model.hidden is not None:
            overrides["hidden"] = self.model.hidden
        return ArchConfig.preset(self.model.preset, arch or self.model.arch, **overrides)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.run.seed)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def to_ini(self) -> str:
        lines = []
        for name, values in self.to_dict().items():
            lines.append(f"[{name}]")
            for k, v in values.items():
                lines.append(f"{k} = {_format(v)}")
            lines.append("")
        return "\n".join(lines)

    def with_overrides(self, **sections: Dict[str, Any]) -> "ToolkitConfig":
        """Replace individual fields, e.g. ``with_overrides(train={"lr": 0.1})``."""
        updates = {}
        for name, values in sections.items():
            if name not in _SECTIONS:
                raise ConfigError(f"unknown section [{name}]")
            current = getattr(self, name)
            known = {f.name for f in dataclasses.fields(current)}
            bad = set(values) - known
            if bad:
                raise ConfigError(f"unknown key(s) in [{name}]: {sorted(bad)}")
            try:
                updates[name] = dataclasses.replace(current, **values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}]: {exc}") from exc
        return dataclasses.replace(self, **updates)


_SECTIONS = {"features": FeatureConfig, "corpus": CorpusConfig, "model": ModelSection,
             "train": TrainConfig, "run": RunSection}


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ", ".join(_format(x) for x in v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def _parse(raw: str, tp) -> Any:
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if raw.lower() == "none" and type(None) in args:
            return None
        return _parse(raw, next(a for a in args if a is not type(None)))
    if origin is tuple:
        inner = args[0] if args else str
        return tuple(_parse(x, inner) for x in raw.split(",") if x.strip())
    if tp is bool:
        if raw.lower() in ("true", "yes", "on", "1"):
            return True
        if raw.lower() in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    return raw


def _section(cls, values: Dict[str, str], name: str):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for key, raw in values.items():
        if key not in hints:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        try:
            kwargs[key] = _parse(raw, hints[key])
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_config(text: str, env: Optional[Dict[str, str]] = None) -> ToolkitConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    sections = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        sections[name] = _section(_SECTIONS[name], dict(parser[name]), name)
    cfg = ToolkitConfig(**sections)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, seed=seed))
    if cfg.model.arch in ARCHS:
        try:
            cfg.arch_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path=None, env: Optional[Dict[str, str]] = None) -> ToolkitConfig:
    """Read ``path`` (defaults when None)."""
    text = "" if path is None else Path(path).read_text()
    return parse_config(text, env)
