"""Run configuration: one dataclass per stage, loaded from an INI file.

Sections are ``[run]``, ``[scenario]``, ``[source]``, ``[synth]``,
``[classifier]`` and ``[adapt]``; keys are the dataclass field names. Lists
are comma-separated and ``none`` maps to ``None``.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .adapt import AdaptConfig
from .classifier import ClassifierConfig
from .data import ScenarioConfig
from .model import SourceConfig
from .synthgen import SynthConfig

__all__ = ["RunConfig", "ConfigError", "load_config", "apply_overrides", "stage_rng", "dump_config"]


class ConfigError(ValueError):
    pass


@dataclass
class RunSettings:
    seed: int = 0
    eval_tau: float = 0.5


@dataclass
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)

    @property
    def seed(self) -> int:
        return self.run.seed

    def sections(self):
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def copy(self) -> "RunConfig":
        return dataclasses.replace(
            self, **{name: dataclasses.replace(sec) for name, sec in self.sections().items()}
        )


def stage_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one named stage of a run."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(label.encode())]))


def stage_seed(seed: int, label: str) -> int:
    return int(stage_rng(seed, label).integers(2**63))


def _parse_value(section, key, raw: str):
    hints = typing.get_type_hints(type(section))
    tp = hints[key]
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        if raw.lower() == "none":
            return None
        tp = next(a for a in args if a is not type(None))
        origin = typing.get_origin(tp)
        args = typing.get_args(tp)
    if origin in (list, typing.List):
        item = args[0] if args else float
        return [item(v) for v in raw.split(",") if v.strip()]
    if tp is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    return raw


def _set(cfg: RunConfig, section: str, key: str, raw: str, where: str) -> None:
    sections = cfg.sections()
    if section not in sections:
        raise ConfigError(f"unknown config section [{section}] ({where})")
    sec = sections[section]
    names = {f.name for f in dataclasses.fields(sec)}
    if key not in names:
        raise ConfigError(f"unknown config key {section}.{key} ({where})")
    try:
        setattr(sec, key, _parse_value(sec, key, raw))
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key} ({where}): {exc}") from None


def _line_of(lines, section, key) -> int:
    current = None
    for no, line in enumerate(lines, 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and s.split("=", 1)[0].split(":", 1)[0].strip().lower() == key:
            return no
    return 0


def load_config(path: Optional[str] = None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    lines = text.splitlines()
    for section in parser.sections():
        for key, raw in parser.items(section):
            _set(cfg, section, key, raw, f"{path}, line {_line_of(lines, section, key)}")
    return cfg


def apply_overrides(cfg: RunConfig, overrides: Iterable[str]) -> RunConfig:
    """Apply ``section.key=value`` strings in order."""
    for item in overrides or ():
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        _set(cfg, section, key, value, f"--set {item}")
    return cfg


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (list, tuple)):
        return ",".join(repr(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: RunConfig) -> str:
    out = []
    for name, sec in cfg.sections().items():
        out.append(f"[{name}]")
        for f in dataclasses.fields(sec):
            out.append(f"{f.name} = {_fmt(getattr(sec, f.name))}")
        out.append("")
    return "\n".join(out)
