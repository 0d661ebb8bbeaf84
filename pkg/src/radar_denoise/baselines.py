"""Radius and statistical outlier removal."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .spatial import KdTree
from .supervision import BinaryMask


@dataclass(frozen=True)
class RorConfig:
    radius: float = 0.8
    min_neighbors: int = 2

    def __post_init__(self):
        if not self.radius > 0 or self.min_neighbors < 1:
            raise ValueError("ROR needs radius > 0 and min_neighbors >= 1")


@dataclass(frozen=True)
class SorConfig:
    k: int = 8
    std_mult: float = 1.0

    def __post_init__(self):
        if self.k < 1 or self.std_mult < 0:
            raise ValueError("SOR needs k >= 1 and std_mult >= 0")


def neighbor_counts(cloud: PointCloud, radius: float, tree: KdTree | None = None) -> np.ndarray:
    """Number of *other* points strictly within ``radius`` of each point."""
    if len(cloud) == 0:
        return np.zeros(0, dtype=np.int64)
    tree = tree or KdTree(cloud.xyz)
    return tree.count_radius(cloud.xyz, radius) - 1


def ror_filter(cloud: PointCloud, cfg: RorConfig = RorConfig()) -> BinaryMask:
    keep = neighbor_counts(cloud, cfg.radius) >= cfg.min_neighbors
    return BinaryMask(keep.astype(np.int8), "point")


def mean_knn_distance(cloud: PointCloud, k: int, tree: KdTree | None = None) -> np.ndarray:
    """Mean distance from each point to its ``k`` nearest other points."""
    n = len(cloud)
    if n <= k:
        raise ValueError(f"SOR needs more than k={k} points, cloud has {n}")
    tree = tree or KdTree(cloud.xyz)
    idx, dist = tree.query_knn(cloud.xyz, k + 1)
    is_self = idx == np.arange(n)[:, None]
    # drop the point itself, or the farthest candidate when a duplicate displaced it
    drop = np.where(is_self.any(axis=1), is_self.argmax(axis=1), k)
    keep = np.ones_like(is_self)
    keep[np.arange(n), drop] = False
    return dist[keep].reshape(n, k).mean(axis=1)


def sor_threshold_mask(mean_d: np.ndarray, std_mult: float) -> np.ndarray:
    mu = mean_d.mean()
    sigma = mean_d.std()
    return mean_d <= mu + std_mult * sigma


def sor_filter(cloud: PointCloud, cfg: SorConfig = SorConfig()) -> BinaryMask:
    """Keep points whose mean k-NN distance is within ``std_mult`` sigmas of the global mean."""
    mean_d = mean_knn_distance(cloud, cfg.k)
    return BinaryMask(sor_threshold_mask(mean_d, cfg.std_mult).astype(np.int8), "point")
