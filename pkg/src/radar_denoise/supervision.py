"""LiDAR-derived supervision masks for radar points and voxels.

A radar point is valid when at least one LiDAR point lies strictly closer
than ``tau``.  The point mask is lifted to voxels either with the ``any``
rule (one valid point suffices) or by majority vote.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .spatial import KdTree
from .voxel import SparseVoxelSet


@dataclass(frozen=True)
class SupervisionConfig:
    tau: float = 0.5
    voxel_rule: str = "any"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.voxel_rule not in ("any", "majority"):
            raise ValueError(f"unknown voxel rule {self.voxel_rule!r}")


@dataclass(frozen=True)
class BinaryMask:
    values: np.ndarray
    level: str = "point"

    def __len__(self) -> int:
        return self.values.size


def point_gt_mask(radar: PointCloud, lidar: PointCloud,
                  cfg: SupervisionConfig = SupervisionConfig(), tree: KdTree | None = None) -> BinaryMask:
    """``mask[i] = 1`` iff some LiDAR point is strictly within ``cfg.tau`` of radar point ``i``."""
    if len(lidar) == 0 or len(radar) == 0:
        return BinaryMask(np.zeros(len(radar), dtype=np.int8), "point")
    tree = tree if tree is not None else KdTree(lidar.xyz)
    hit = tree.any_within(radar.xyz, cfg.tau)
    return BinaryMask(hit.astype(np.int8), "point")


def voxel_gt_mask(point_mask: BinaryMask, voxels: SparseVoxelSet, rule: str = "any") -> BinaryMask:
    values = np.asarray(point_mask.values)
    if values.size != voxels.point_voxel.size:
        raise ValueError(
            f"point mask has {values.size} entries, voxels were built from {voxels.point_voxel.size} points"
        )
    pv = voxels.point_voxel
    sel = pv >= 0
    nv = len(voxels)
    pos = np.bincount(pv[sel], weights=values[sel].astype(np.float64), minlength=nv)
    if rule == "any":
        out = pos > 0
    elif rule == "majority":
        tot = np.bincount(pv[sel], minlength=nv)
        out = 2 * pos > tot
    else:
        raise ValueError(f"unknown voxel rule {rule!r}")
    return BinaryMask(out.astype(np.int8), "voxel")
