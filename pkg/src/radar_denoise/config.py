"""Run configuration: one JSON document, nested sections, strict keys."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import RorConfig, SorConfig
from .head import HeadConfig
from .model import ModelConfig
from .schema import ConfigError, build, to_plain
from .supervision import SupervisionConfig
from .synth import SceneConfig
from .voxel import VoxelGridConfig


@dataclass(frozen=True)
class LossConfig:
    cls: str = "focal"
    reg: str = "smooth_l1"
    weights: tuple = (1.0, 2.0, 50.0)
    focal: tuple = (2.0, 0.25)

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "focal", tuple(float(f) for f in self.focal))
        if self.cls not in ("focal", "bce") or self.reg not in ("smooth_l1", "mse"):
            raise ValueError("loss.cls must be focal|bce and loss.reg smooth_l1|mse")
        if len(self.weights) != 3 or len(self.focal) != 2:
            raise ValueError("loss.weights needs 3 values and loss.focal 2")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    lr: float = 0.003
    seed: int = 0
    shuffle: bool = True


@dataclass(frozen=True)
class PathsConfig:
    data: str = ""
    out: str = ""


@dataclass(frozen=True)
class RunConfig:
    synth: SceneConfig = field(default_factory=SceneConfig)
    voxel: VoxelGridConfig = field(default_factory=VoxelGridConfig)
    supervision: SupervisionConfig = field(default_factory=SupervisionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ror: RorConfig = field(default_factory=RorConfig)
    sor: SorConfig = field(default_factory=SorConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        return to_plain(self)

    def replace(self, **overrides) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"supervision.tau": 0.3})``."""
        d = self.to_dict()
        for key, value in overrides.items():
            set_dotted(d, key, value)
        return from_dict(d)


def from_dict(data: dict) -> RunConfig:
    return build(RunConfig, data)


def set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section in {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def parse_override(text: str):
    """``section.key=value``; the value is JSON when it parses, else a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path=None, overrides=()) -> RunConfig:
    d = RunConfig().to_dict()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        from_dict(user)  # strict key check on the file itself
        _merge(d, user)
    for item in overrides:
        key, value = parse_override(item)
        set_dotted(d, key, value)
    return from_dict(d)


def _merge(base: dict, update: dict) -> None:
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v


def model_section(cfg: RunConfig) -> dict:
    """The parts of the config a checkpoint's parameters depend on."""
    d = cfg.to_dict()
    return {"voxel": d["voxel"], "model": d["model"], "head": d["head"]}
