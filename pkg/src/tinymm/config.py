"""Run configuration: nested dataclasses, YAML loading, and dotted-path
command-line overrides (e.g. ``model.d_model=192`` or ``train.stages.0.steps=50``).
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .codec import LatentCodecConfig, VitConfig
from .model import ModelConfig
from .moe import MoEConfig


@dataclass(frozen=True)
class DataConfig:
    num_samples: int = 2048
    num_eval: int = 200
    seed: int = 0
    size_anchor: int = 32
    downsample: int = 4
    num_ratios: int = 33
    task_mix: dict[str, float] = field(default_factory=lambda: {
        "t2i": 0.45, "lm": 0.10, "mmu": 0.15, "intl": 0.15, "cot": 0.15})


@dataclass(frozen=True)
class StageConfig:
    name: str                      # "I" .. "IV"
    steps: int
    batch_size: int = 8
    lr: float = 3e-4
    warmup: int = 100
    vae_anchors: tuple[int, ...] = (32,)
    caption_dropout: float = 0.1

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if not 0.0 <= self.caption_dropout < 1.0:
            raise ValueError("caption_dropout must lie in [0, 1)")
        if not self.vae_anchors:
            raise ValueError("stage needs at least one vae anchor")


@dataclass(frozen=True)
class TrainConfig:
    stages: tuple[StageConfig, ...] = (StageConfig(name="I", steps=400),)
    seed: int = 0
    weight_decay: float = 0.01
    log_every: int = 20
    ckpt_every: int = 0            # 0 = only final
    guidance_eval: float = 3.0


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=lambda: ModelConfig(vocab_size=0))
    codec: LatentCodecConfig = field(default_factory=LatentCodecConfig)
    vit: VitConfig = field(default_factory=VitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


def to_dict(cfg) -> dict:
    if dataclasses.is_dataclass(cfg) and not isinstance(cfg, type):
        return {f.name: to_dict(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}
    if isinstance(cfg, (list, tuple)):
        return [to_dict(v) for v in cfg]
    if isinstance(cfg, dict):
        return {k: to_dict(v) for k, v in cfg.items()}
    return cfg


def _build(cls, value):
    """Recursively construct `cls` from plain YAML/JSON data."""
    origin = typing.get_origin(cls)
    if dataclasses.is_dataclass(cls) and isinstance(cls, type):
        if not isinstance(value, dict):
            raise TypeError(f"expected mapping for {cls.__name__}, got {type(value).__name__}")
        hints = typing.get_type_hints(cls)
        kwargs = {}
        for key, val in value.items():
            if key not in hints:
                raise KeyError(f"unknown field {key!r} for {cls.__name__}")
            kwargs[key] = _build(hints[key], val)
        return cls(**kwargs)
    if origin is tuple:
        args = typing.get_args(cls)
        inner = args[0] if args else None
        return tuple(_build(inner, v) if inner else v for v in value)
    if origin in (list, typing.List):
        inner = typing.get_args(cls)[0]
        return [_build(inner, v) for v in value]
    if origin is dict:
        return dict(value)
    if origin is typing.Union or origin is types.UnionType:  # e.g. int | None
        for arg in typing.get_args(cls):
            if arg is type(None):
                if value is None:
                    return None
                continue
            try:
                return _build(arg, value)
            except (TypeError, ValueError):
                continue
        raise TypeError(f"cannot coerce {value!r} into {cls}")
    if cls in (int, float, str, bool):
        return cls(value)
    return value


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data or {})


def load_yaml(path: str | Path) -> RunConfig:
    return from_dict(yaml.safe_load(Path(path).read_text()))


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Return a copy of cfg with ``dotted.path=value`` assignments applied."""
    data = to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        keys = path.split(".")
        node = data
        for key in keys[:-1]:
            node = node[int(key)] if isinstance(node, list) else node[key]
        last = keys[-1]
        if isinstance(node, list):
            node[int(last)] = _parse_value(raw)
        else:
            if last not in node:
                raise KeyError(f"unknown config path {path!r}")
            node[last] = _parse_value(raw)
    return from_dict(data)
