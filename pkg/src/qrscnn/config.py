"""JSON run configuration: defaults, partial overrides, and the effective-config dump."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .cnn import ModelConfig
from .dataset import CorpusSpec
from .evaluate import DEFAULT_TOL_MS
from .postprocess import PP_LEVELS
from .preprocess import MASK_HALF_WIDTH_MS, TRAIN_HOP_S, WINDOW_S, WORKING_FS
from .training import TrainConfig


@dataclass
class Paths:
    data_dir: str | None = None
    model_dir: str | None = None
    output_dir: str | None = None


@dataclass
class RunConfig:
    working_fs: int = WORKING_FS
    mask_half_width_ms: float = MASK_HALF_WIDTH_MS
    window_s: float = WINDOW_S
    train_hop_s: float = TRAIN_HOP_S
    pp_level: str = "advanced"
    tol_ms: float = DEFAULT_TOL_MS
    peak_method: str = "argmax"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: CorpusSpec = field(default_factory=CorpusSpec)
    paths: Paths = field(default_factory=Paths)

    def validate(self) -> None:
        for name in ("working_fs", "mask_half_width_ms", "window_s", "train_hop_s", "tol_ms"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.pp_level not in PP_LEVELS:
            raise ValueError(f"pp_level must be one of {PP_LEVELS}, got {self.pp_level!r}")
        if self.peak_method not in ("argmax", "midpoint"):
            raise ValueError("peak_method must be 'argmax' or 'midpoint'")
        self.model.validate()
        self.train.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def _merge(obj, data: dict, where="config"):
    """Return a copy of dataclass ``obj`` with ``data`` applied recursively."""
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown key {where}.{key}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ValueError(f"{where}.{key} must be an object")
            updates[key] = _merge(current, value, f"{where}.{key}")
        else:
            updates[key] = value
    return type(obj)(**{**{k: getattr(obj, k) for k in known}, **updates})


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = _merge(cfg, json.loads(Path(path).read_text()))
    if overrides:
        cfg = _merge(cfg, overrides)
    cfg.validate()
    return cfg
