"""Sparse voxelisation of radar clouds and bird's-eye-view projection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, as_tensor, segment_max
from .cloud import PointCloud


@dataclass(frozen=True)
class VoxelGridConfig:
    size: tuple = (0.2, 0.2, 0.2)
    range: tuple = (-20.0, 20.0, -20.0, 20.0, -2.0, 4.0)
    max_points: int = 32
    bev_stride: int = 4  # voxel columns per BEV cell along x and y

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        object.__setattr__(self, "range", tuple(float(r) for r in self.range))
        if len(self.size) != 3 or min(self.size) <= 0:
            raise ValueError("voxel size needs three positive entries")
        if len(self.range) != 6 or not all(self.range[2 * i] < self.range[2 * i + 1] for i in range(3)):
            raise ValueError("voxel range must be (xmin, xmax, ymin, ymax, zmin, zmax), well ordered")
        if self.max_points < 1 or self.bev_stride < 1:
            raise ValueError("max_points and bev_stride must be >= 1")

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.range[0::2])

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.range[1::2])

    @property
    def grid_shape(self) -> tuple:
        ext = (self.upper - self.lower) / np.array(self.size)
        return tuple(int(v) for v in np.ceil(ext - 1e-9))

    @property
    def bev_shape(self) -> tuple:
        nx, ny, _ = self.grid_shape
        s = self.bev_stride
        return (-(-nx // s), -(-ny // s))

    @property
    def bev_cell_size(self) -> tuple:
        return (self.size[0] * self.bev_stride, self.size[1] * self.bev_stride)


@dataclass
class SparseVoxelSet:
    """Occupied voxels sorted by linear grid key.

    ``features`` holds the per-voxel mean of (x, y, z, intensity, doppler);
    ``point_voxel[i]`` is the voxel of cloud point ``i`` (-1 when out of range).
    """

    coords: np.ndarray
    features: np.ndarray
    point_map: list
    point_voxel: np.ndarray
    cfg: VoxelGridConfig = field(default_factory=VoxelGridConfig)

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self.features[:, :3]


def voxelize(cloud: PointCloud, cfg: VoxelGridConfig = VoxelGridConfig()) -> SparseVoxelSet:
    """Group in-range points into voxels and mean-pool their 5-vectors.

    Only the first ``max_points`` points of a voxel (in cloud order) enter the
    mean; ``point_map`` still lists every contributing point.
    """
    data = cloud.data
    n = data.shape[0]
    xyz = data[:, :3]
    lo, hi = cfg.lower, cfg.upper
    inside = np.all((xyz >= lo) & (xyz < hi), axis=1) if n else np.zeros(0, dtype=bool)
    dims = np.array(cfg.grid_shape)
    idx = np.flatnonzero(inside)
    cell = np.floor((xyz[idx] - lo) / np.array(cfg.size)).astype(np.int64)
    cell = np.clip(cell, 0, dims - 1)
    keys = (cell[:, 0] * dims[1] + cell[:, 1]) * dims[2] + cell[:, 2]
    uniq, inverse = np.unique(keys, return_inverse=True)
    inverse = inverse.reshape(-1)
    nv = uniq.size
    coords = np.stack([uniq // (dims[1] * dims[2]), (uniq // dims[2]) % dims[1], uniq % dims[2]], axis=1)

    point_voxel = np.full(n, -1, dtype=np.int64)
    point_voxel[idx] = inverse
    # idx is ascending, so a stable sort by voxel keeps cloud order inside each voxel
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(nv + 1))
    point_map = [idx[order[starts[v]:starts[v + 1]]] for v in range(nv)]

    rank = np.empty(idx.size, dtype=np.int64)
    rank[order] = np.arange(idx.size) - np.repeat(starts[:-1], np.diff(starts))
    used = rank < cfg.max_points
    feats = np.zeros((nv, data.shape[1]))
    np.add.at(feats, inverse[used], data[idx[used]])
    counts = np.bincount(inverse[used], minlength=nv).astype(np.float64)
    if nv:
        feats /= counts[:, None]
    return SparseVoxelSet(coords.astype(np.int64), feats, point_map, point_voxel, cfg)


@dataclass
class BevGrid:
    """``features`` is a (width, height, C) grid; width runs along x."""

    width: int
    height: int
    features: Tensor

    @property
    def cells(self) -> np.ndarray:
        """Cell features flattened to (W*H, C), cell ``ix * height + iy``."""
        return self.features.data.reshape(self.width * self.height, -1)


def bev_cell_index(voxels: SparseVoxelSet, cfg: VoxelGridConfig | None = None) -> np.ndarray:
    cfg = cfg or voxels.cfg
    _, h = cfg.bev_shape
    bx = voxels.coords[:, 0] // cfg.bev_stride
    by = voxels.coords[:, 1] // cfg.bev_stride
    return bx * h + by


def bev_project(voxels: SparseVoxelSet, features, cfg: VoxelGridConfig | None = None,
                cell_index: np.ndarray | None = None) -> BevGrid:
    """Collapse voxel features onto the BEV plane by element-wise max per cell."""
    cfg = cfg or voxels.cfg
    features = as_tensor(features)
    if features.ndim != 2 or features.shape[0] != len(voxels):
        raise ValueError(f"features {features.shape} do not match {len(voxels)} voxels")
    w, h = cfg.bev_shape
    if cell_index is None:
        cell_index = bev_cell_index(voxels, cfg)
    flat = segment_max(features, cell_index, w * h)
    return BevGrid(w, h, flat.reshape(w, h, features.shape[1]))
