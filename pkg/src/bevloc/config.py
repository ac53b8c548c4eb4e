"""Experiment configuration: nested dataclasses loaded from YAML.

Dataclass defaults keep the published hyperparameters (batch 140, 140 epochs,
step sizes 2e-5 / 2e-4); ``ExperimentConfig.desk()`` is the laptop-scale preset
used by the CLI when no config file is given.
"""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .geometry import ConfigError
from .model import ModelConfig
from .training import Stage1Config, Stage2Config
from .video2bev import BEVConfig, FitConfig


@dataclass(frozen=True)
class DataConfig:
    n_locations: int = 20
    n_test: int = 6
    fps: int = 2
    elevations: tuple[float, ...] = (45.0, 30.0)
    video_seconds: float = 12.0
    occlusion_rate: float = 0.0
    n_synthetic: int = 32
    seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    k: int = 32
    elevation: float = 45.0
    source: str = "bev"              # "bev" or "drone" (raw frames)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    bev: BEVConfig = field(default_factory=BEVConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def desk(cls) -> "ExperimentConfig":
        return cls(
            data=DataConfig(elevations=(45.0,)),
            stage1=Stage1Config(epochs=30, batch_size=8, lr_encoder=1e-3, lr_other=1e-2),
            stage2=Stage2Config(epochs=3, batch_size=8, lr=1e-3, lr_stage1=1e-4),
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, data=replace(self.data, seed=seed), fit=replace(self.fit, seed=seed),
                       stage1=replace(self.stage1, seed=seed), stage2=replace(self.stage2, seed=seed))

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _coerce(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(values).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}; allowed {sorted(known)}")
    out: dict[str, Any] = {}
    for name, value in values.items():
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            out[name] = _coerce(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple):
            out[name] = tuple(value) if isinstance(value, (list, tuple)) else (value,)
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            out[name] = float(value)
        else:
            out[name] = value
    return out


def from_dict(d: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Overlay a (possibly partial) nested mapping onto ``base`` (default: the desk preset)."""
    base = base or ExperimentConfig.desk()
    checked = _coerce(ExperimentConfig, d or {}, "config")
    updates = {}
    for section, values in checked.items():
        updates[section] = replace(getattr(base, section), **values)
    return replace(base, **updates)


def load_config(path=None, base: ExperimentConfig | None = None) -> ExperimentConfig:
    if path is None:
        return base or ExperimentConfig.desk()
    text = Path(path).read_text()
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})") from e
    return from_dict(d or {}, base)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
