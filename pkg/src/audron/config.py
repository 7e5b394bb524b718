"""``key=value`` run configuration merging synthesis, feature, model and training settings."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .dsp import StftConfig
from .features import FeatureConfig
from .model import BRANCHES, ModelConfig
from .synthgen import SynthParams
from .traineval import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSettings:
    per_class_train: int = 65
    per_class_val: int = 20
    split_ratio: float = 0.8


@dataclass(frozen=True)
class ModelSettings:
    profile: str = "full"
    dropout: float = 0.3
    branches: tuple = BRANCHES


@dataclass(frozen=True)
class RunConfig:
    synth: SynthParams = field(default_factory=SynthParams)
    stft: StftConfig = field(default_factory=StftConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSettings = field(default_factory=DataSettings)

    def feature_config(self) -> FeatureConfig:
        return dataclasses.replace(self.features, stft=self.stft)

    def model_config(self, n_classes: int, branches: Optional[tuple] = None) -> ModelConfig:
        return ModelConfig(n_classes=n_classes, branches=branches or self.model.branches,
                           profile=self.model.profile, dropout=self.model.dropout, seed=self.train.seed)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, seed=seed))


# FeatureConfig.stft is configured through the ``stft.`` section
_SKIP = {("features", "stft")}


def _sections(cfg: RunConfig):
    for sec in dataclasses.fields(cfg):
        obj = getattr(cfg, sec.name)
        for f in dataclasses.fields(obj):
            if (sec.name, f.name) not in _SKIP:
                yield sec.name, f.name, getattr(obj, f.name)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(s) for s in items)
            return tuple(items)
        if default is None or isinstance(default, float):
            return None if raw.lower() == "none" else float(raw)
        if isinstance(default, int):
            return int(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc


def to_text(cfg: RunConfig) -> str:
    return "".join(f"{sec}.{name}={_format(value)}\n" for sec, name, value in _sections(cfg))


def parse(text: str, base: RunConfig = RunConfig()) -> RunConfig:
    defaults = {f"{sec}.{name}": value for sec, name, value in _sections(base)}
    updates: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        sec, name = key.split(".", 1)
        updates.setdefault(sec, {})[name] = _convert(raw, defaults[key], key)
    try:
        replaced = {sec: dataclasses.replace(getattr(base, sec), **vals) for sec, vals in updates.items()}
        cfg = dataclasses.replace(base, **replaced)
        cfg.synth.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load(path) -> RunConfig:
    return parse(Path(path).read_text(encoding="utf-8"))
