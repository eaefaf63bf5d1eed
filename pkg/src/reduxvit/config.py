"""Run configuration: one JSON document, every field defaulted, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .bdmm import BdmmConfig
from .data import SynthSpec
from .errors import ConfigError
from .renyi import IbConfig
from .trainer import TrainConfig
from .vit import ModelConfig


@dataclass(frozen=True)
class Paths:
    out_dir: str = "runs/default"
    data_dir: Optional[str] = None
    checkpoint: Optional[str] = None


@dataclass(frozen=True)
class ProbeConfig:
    x_source: str = "pixels"
    split: str = "test"
    max_images: int = 64

    def __post_init__(self):
        if self.x_source not in ("pixels", "embedding"):
            raise ConfigError("probe.x_source must be 'pixels' or 'embedding'")
        if self.split not in ("train", "test"):
            raise ConfigError("probe.split must be 'train' or 'test'")
        if self.max_images < 2:
            raise ConfigError("probe.max_images must be >= 2")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: SynthSpec = field(default_factory=SynthSpec)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    paths: Paths = field(default_factory=Paths)

    def __post_init__(self):
        m, d = self.model, self.data
        for name in ("image_h", "image_w", "channels", "patch"):
            if getattr(m, name) != getattr(d, name):
                raise ConfigError(
                    f"data.{name}={getattr(d, name)} does not match model.{name}={getattr(m, name)}"
                )
        if m.num_classes != d.num_classes:
            raise ConfigError(
                f"data.num_classes={d.num_classes} does not match model.num_classes={m.num_classes}"
            )

    # ------------------------------------------------------------ (de)serialize
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        return _build(cls, raw, "")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)

    def with_overrides(self, seed=None, beta=None, lam=None, batch_size=None, no_bdmm=False,
                       fixed_ratio=None, out=None) -> "RunConfig":
        train, data, paths = self.train, self.data, self.paths
        ib, bd = train.ib, train.bdmm
        if beta is not None:
            ib = dataclasses.replace(ib, beta=beta)
        if lam is not None:
            bd = dataclasses.replace(bd, lam=lam)
        changes: dict[str, Any] = {"ib": ib, "bdmm": bd}
        if seed is not None:
            changes["seed"] = seed
            data = dataclasses.replace(data, seed=seed)
        if batch_size is not None:
            changes["batch_size"] = batch_size
        if no_bdmm:
            changes["bdmm_enabled"] = False
        if fixed_ratio is not None:
            changes["fixed_ratio"] = fixed_ratio
        train = dataclasses.replace(train, **changes)
        if out is not None:
            paths = dataclasses.replace(paths, out_dir=str(out))
        return dataclasses.replace(self, train=train, data=data, paths=paths)


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        prefix = where + "." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in raw.items():
        sub = _SECTION_TYPES.get((cls, name))
        key = f"{where}.{name}" if where else name
        kwargs[name] = _build(sub, value, key) if sub is not None else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


_SECTION_TYPES = {
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "data"): SynthSpec,
    (RunConfig, "probe"): ProbeConfig,
    (RunConfig, "paths"): Paths,
    (TrainConfig, "ib"): IbConfig,
    (TrainConfig, "bdmm"): BdmmConfig,
}
