"""Tracker hyperparameters.

Defaults reproduce the published settings: time window ``l = 5``,
``beta = 0.6``, NMS kernel ``s = 3``, response threshold 0.05, at most 60
peaks, ROI side 20, ``IOU_min = 0.7``, ``A_max = 30`` and kernel shape
``alpha = 0.7``. The newborn box size (40 x 100) is our own default.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from os import PathLike
from pathlib import Path
from typing import Any, Mapping

from .mot_io import ConfigError


@dataclass(frozen=True)
class NmsConfig:
    s: int = 3
    score_min: float = 0.05
    k: int = 60

    def __post_init__(self):
        if self.s < 1 or self.s % 2 == 0:
            raise ConfigError(f"NMS kernel size must be odd and >= 1, got {self.s}")
        if not 0.0 < self.score_min < 1.0:
            raise ConfigError(f"score_min must lie in (0, 1), got {self.score_min}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class LinkerConfig:
    iou_min: float = 0.7
    a_max: int = 30
    init_w: float = 40.0
    init_h: float = 100.0
    l: int = 5
    beta: float = 0.6
    r_z: int = 20

    def __post_init__(self):
        if not 0.0 < self.iou_min < 1.0:
            raise ConfigError(f"iou_min must lie in (0, 1), got {self.iou_min}")
        if self.a_max < 1:
            raise ConfigError(f"a_max must be >= 1, got {self.a_max}")
        if self.init_w <= 0 or self.init_h <= 0:
            raise ConfigError("init_w and init_h must be positive")
        if self.l < 1:
            raise ConfigError(f"window length l must be >= 1, got {self.l}")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")
        if self.r_z < 1:
            raise ConfigError(f"ROI size must be >= 1, got {self.r_z}")


@dataclass(frozen=True)
class TrackerConfig:
    """Every tunable of the pipeline in one place."""

    l: int = 5
    beta: float = 0.6
    s: int = 3
    score_min: float = 0.05
    k: int = 60
    r_z: int = 20
    iou_min: float = 0.7
    a_max: int = 30
    alpha: float = 0.7
    init_w: float = 40.0
    init_h: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        # delegate the remaining checks
        self.nms
        self.linker

    @property
    def nms(self) -> NmsConfig:
        return NmsConfig(s=self.s, score_min=self.score_min, k=self.k)

    @property
    def linker(self) -> LinkerConfig:
        return LinkerConfig(
            iou_min=self.iou_min,
            a_max=self.a_max,
            init_w=self.init_w,
            init_h=self.init_h,
            l=self.l,
            beta=self.beta,
            r_z=self.r_z,
        )

    def updated(self, overrides: Mapping[str, Any]) -> TrackerConfig:
        """Return a copy with ``overrides`` applied; ``None`` values are ignored."""
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        clean = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **clean)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def load_config_file(path: str | PathLike, base: TrackerConfig | None = None) -> TrackerConfig:
    """Read a JSON object of config keys on top of ``base`` (defaults if omitted)."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return (base or TrackerConfig()).updated(data)
