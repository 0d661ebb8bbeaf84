"""Radar-only inference: checkpoint in, soft mask and retained cloud out.

Nothing here touches LiDAR or the label-building code; a test walks this
module's imports to keep it that way.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import ParamStore, config_hash, load_checkpoint, no_grad
from .cloud import PointCloud, load_cloud, save_cloud
from .head import HeadConfig
from .model import ModelConfig, hmsd_forward, plan_scene, point_scores
from .schema import build, to_plain
from .voxel import VoxelGridConfig, voxelize


class CheckpointMismatch(ValueError):
    pass


@dataclass
class DenoiseModel:
    store: ParamStore
    voxel: VoxelGridConfig
    model: ModelConfig
    config: dict  # model section as stored in the checkpoint

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def model_config_from_run_config(doc: dict) -> dict:
    """The checkpoint-relevant sections of a run config document, defaults filled in."""
    return {
        "voxel": to_plain(build(VoxelGridConfig, doc.get("voxel", {}), "voxel.")),
        "model": to_plain(build(ModelConfig, doc.get("model", {}), "model.")),
        "head": to_plain(build(HeadConfig, doc.get("head", {}), "head.")),
    }


def load_model(checkpoint, expected_config: dict | None = None) -> DenoiseModel:
    """Load a checkpoint; refuse it if ``expected_config`` hashes differently."""
    store, config, _ = load_checkpoint(checkpoint)
    if expected_config is not None and config_hash(expected_config) != config_hash(config):
        raise CheckpointMismatch(
            f"{checkpoint}: checkpoint config hash {config_hash(config)} does not match "
            f"requested config hash {config_hash(expected_config)}")
    return DenoiseModel(store, build(VoxelGridConfig, config["voxel"]),
                        build(ModelConfig, config["model"]), config)


def score_cloud(model: DenoiseModel, radar: PointCloud) -> np.ndarray:
    """Soft validity score for every radar point (0 for points outside the grid)."""
    voxels = voxelize(radar, model.voxel)
    if len(voxels) == 0:
        return np.zeros(len(radar))
    plan = plan_scene(voxels, model.model)
    with no_grad():
        out = hmsd_forward(model.store, plan, model.model, mode="eval")
    return point_scores(voxels, out.mask_values)


def denoise_cloud(model: DenoiseModel, radar: PointCloud, threshold: float | None = None):
    """Return ``(retained cloud, per-point soft scores)``."""
    thr = model.model.threshold if threshold is None else threshold
    scores = score_cloud(model, radar)
    return radar.select(scores >= thr), scores


def save_mask(scores: np.ndarray, path) -> None:
    lines = ["index,score"] + [f"{i},{s:.9g}" for i, s in enumerate(scores)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mask(path) -> np.ndarray:
    rows = Path(path).read_text().splitlines()[1:]
    return np.array([float(r.split(",")[1]) for r in rows if r], dtype=np.float64)


def denoise_file(model: DenoiseModel, radar_path, out_path, mask_path=None, threshold=None) -> dict:
    radar = load_cloud(radar_path, kind="radar")
    kept, scores = denoise_cloud(model, radar, threshold)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_cloud(kept, out_path)
    mask_path = Path(mask_path) if mask_path else out_path.with_name(out_path.stem + "_mask.csv")
    save_mask(scores, mask_path)
    return {"input": len(radar), "kept": len(kept), "out": str(out_path), "mask": str(mask_path)}
