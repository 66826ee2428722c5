"""Training configuration and its YAML file format.

A config file mirrors :class:`TrainConfig`; every key is optional::

    learning_rate: 1.0e-5
    batch_size: 16
    epochs: 10
    max_steps: null          # stop early after this many optimizer steps
    seed: 0
    deterministic: true
    dtype: float32           # or float64
    workers: 0               # DataLoader worker processes
    loss: {alpha: 2.0, lambda1: 0.5, lambda2: 0.5}
    model:
      input_resolution: 224
      hidden: 128
      leaky_slope: 0.01
      residual: {kind: residual50, checkpoint_path: null}
      windowed: {kind: windowed_tiny, checkpoint_path: null}
      fusion: {reduced_dim: 256, pool_kernel: 2}
      use_rm: true
      use_stm: true
      use_msffm: true
      use_srm_weight_branch: true
      stages_enabled: [1, 2, 3, 4]
      freeze_backbones: false

Dotted ``key=value`` overrides (``model.use_rm=false``) are applied on top.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import yaml

from ..model import ModelConfig
from ..objectives import LossConfig

DTYPES = ("float32", "float64")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    learning_rate: float = 1e-5
    batch_size: int = 16
    epochs: int = 10
    max_steps: Optional[int] = None
    seed: int = 0
    deterministic: bool = True
    dtype: str = "float32"
    workers: int = 0

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if self.max_steps is not None and self.max_steps <= 0:
            raise ValueError("max_steps must be positive when given")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {DTYPES}")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Desk-scale preset: toy backbones at 64x64, lr 1e-3."""
        model = overrides.pop("model", None) or ModelConfig.toy()
        base = dict(model=model, learning_rate=1e-3, epochs=1)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**copy.deepcopy(d))


def _set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise KeyError(f"unknown config section {p!r} in {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise KeyError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def apply_overrides(d: dict, overrides: Iterable[str]) -> dict:
    """Apply ``dotted.key=value`` strings; values are parsed as YAML scalars/lists."""
    d = copy.deepcopy(d)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        _set_dotted(d, key.strip(), yaml.safe_load(raw))
    return d


def load_config(path=None, overrides: Iterable[str] = (), base: Optional[TrainConfig] = None) -> TrainConfig:
    d = (base or TrainConfig()).to_dict()
    if path is not None:
        with open(path, encoding="utf-8") as f:
            file_d = yaml.safe_load(f) or {}
        if not isinstance(file_d, dict):
            raise ValueError(f"{path}: config must be a mapping")
        for key, value in _flatten(file_d):
            _set_dotted(d, key, value)
    return TrainConfig.from_dict(apply_overrides(d, overrides))


def _flatten(d: dict, prefix: str = ""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and v:
            yield from _flatten(v, key + ".")
        else:
            yield key, v
