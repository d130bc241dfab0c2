"""Run configuration: preset < JSON file < command-line flags.

A config file looks like::

    {
      "data":   {"path": "data/smd", "format": "npy", "dims": 38, "val_fraction": 0.2},
      "model":  {"alpha": 0.1, "beta": 0.1, "lambda": 0.001, "window": 100, "q": 128,
                 "gru_layers_variant": 6, "gru_layers_invariant": 2,
                 "norm_flags": {"var_norm": true, "var_denorm": true,
                                "inv_norm": true, "inv_denorm": false}},
      "train":  {"learning_rate": 0.01, "batch_size": 128, "max_epochs": 50,
                 "patience": 10, "seed": 0},
      "detect": {"r": 0.5, "point_adjust": true},
      "out": "runs/smd"
    }

Run manifests written by the CLI have the same layout plus a ``meta`` block,
so any manifest can be fed back in with ``--config``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

from .data_io import DatasetSpec
from .exceptions import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig

PRESETS = ("smd", "msl", "smap", "swat", "psm")
_TOP_KEYS = {"data", "model", "train", "detect", "out", "meta"}


@dataclass
class DetectConfig:
    r: float = 0.5
    point_adjust: bool = True

    def __post_init__(self):
        if not 0 < self.r < 100:
            raise ConfigError(f"r must lie strictly between 0 and 100, got {self.r}")


@dataclass
class RunConfig:
    data: Optional[DatasetSpec]
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    out: str = "runs/default"

    def to_dict(self) -> dict:
        return {
            "data": None if self.data is None else asdict(self.data),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "detect": asdict(self.detect),
            "out": self.out,
        }


def load_preset(name: str) -> dict:
    name = name.lower()
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("koopagru").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _section(cls, d: Optional[dict], name: str):
    d = d or {}
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"invalid {name} section: {exc}") from exc


def resolve(raw: dict, require_data: bool = True) -> RunConfig:
    """Validate a merged config dict into a :class:`RunConfig`."""
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    data = raw.get("data") or {}
    if data.get("path") is None:
        if require_data:
            raise ConfigError("data.path is required (set it in the config or pass --data-path)")
        spec = None
    else:
        spec = _section(DatasetSpec, data, "data")
    try:
        model = ModelConfig.from_dict(raw.get("model") or {})
        train = TrainConfig.from_dict(raw.get("train") or {})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    detect = _section(DetectConfig, raw.get("detect"), "detect")
    out = raw.get("out", "runs/default")
    return RunConfig(spec, model, train, detect, str(out))
