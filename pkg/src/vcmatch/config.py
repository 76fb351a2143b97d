"""Run configuration: one JSON document holding every stage's settings."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .model import ModelConfig, TrainConfig
from .node2vec import SgnsConfig, WalkConfig
from .synthgen import WorldConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    cutoffs: tuple[int, ...] = (2021, 2022, 2023)
    seed: int = 0
    train_fraction: float = 0.7
    exclude_future_positives: bool = True
    exclude_investor_types: tuple[str, ...] = ("individual", "unknown", "")


@dataclass(frozen=True)
class FeatureConfig:
    text_dim: int = 256
    categorical_mode: str = "multihot"


@dataclass(frozen=True)
class ArchConfig:
    """Model settings that do not depend on the data (input widths are filled in later)."""

    d_model: int = 256
    heads: int = 4
    fund_hidden: int = 256
    head_hidden: int = 128
    context_order: str = "oldest_first"
    zero_init_head: bool = True
    normalize_embedding: bool = True
    clamp_eps: float = 1e-7
    seed: int = 0

    def model_config(self, **dims) -> ModelConfig:
        return ModelConfig(**dims, **dataclasses.asdict(self))


@dataclass(frozen=True)
class AblationConfig:
    structural: str = "full"
    unseen_fraction: float = 0.5
    unseen_seed: int = 0

    def __post_init__(self):
        if self.structural not in ("zero", "full", "imputed"):
            raise ConfigError(f"structural must be zero, full or imputed, got {self.structural!r}")
        if not 0.0 <= self.unseen_fraction <= 1.0:
            raise ConfigError("unseen_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    walk: WalkConfig = field(default_factory=WalkConfig)
    sgns: SgnsConfig = field(default_factory=SgnsConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())

    def replace(self, section: str, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})


def fingerprint(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _coerce(value, like):
    if isinstance(like, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}")
        return tuple(value)
    if isinstance(like, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}")
        return value
    if isinstance(like, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(value, getattr(defaults, name))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name: f for f in fields(RunConfig)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    sections = {}
    for name, value in data.items():
        section_cls = type(getattr(RunConfig(), name))
        sections[name] = _build(section_cls, value, name)
    return RunConfig(**sections)


def load_config(path: str | Path | None, overrides: list[str] = (), base: dict | None = None) -> RunConfig:
    """Read a JSON config (or start from ``base``) and apply ``section.key=value`` overrides.

    Override values are parsed as JSON, falling back to the raw string.
    """
    data: dict = {k: dict(v) for k, v in (base or {}).items()}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for item in overrides:
        key, sep, raw = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        data.setdefault(section, {})[name] = value
    return from_dict(data)


def save_config(path: str | Path, config: RunConfig) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
