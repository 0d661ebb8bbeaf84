"""Hierarchical multi-scale denoising network.

Two branches read the same voxel features:

* a point-hierarchy branch (farthest point sampling, k-NN grouping with a
  shared MLP and max-pool per level, then inverse-distance propagation back
  to full resolution with skip concatenation), output width 128;
* a submanifold sparse-convolution branch (conv, batch norm, ReLU per stage;
  stage outputs concatenated and mixed to width 64).

Their concatenation feeds a small MLP with a sigmoid that scores every voxel
in (0, 1).  The last sparse-conv stage, gated by that score, is projected to
a BEV grid for the detection head.

Everything that depends only on voxel geometry (sampling, grouping,
interpolation weights, convolution rulebook, BEV cell ids) is collected in a
:class:`ScenePlan` so it can be computed once per scene and reused across
training epochs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import ParamStore, Tensor, concat, max_axis, mul, relu, reshape, sigmoid, take, tsum
from .layers import batchnorm_apply, linear, mlp_apply, subm_conv_apply, subm_rulebook
from .spatial import KdTree, farthest_point_sampling
from .voxel import BevGrid, SparseVoxelSet, bev_cell_index, bev_project


@dataclass(frozen=True)
class HpnetConfig:
    num_levels: int = 3
    ratios: tuple = (0.25, 0.25, 0.25)
    neighbors: int = 16
    sa_widths: tuple = ((32, 64), (64, 128), (128, 128))
    fp_widths: tuple = ((128,), (128,), (128, 128))
    out_width: int = 128
    fps_start: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        object.__setattr__(self, "sa_widths", tuple(tuple(w) for w in self.sa_widths))
        object.__setattr__(self, "fp_widths", tuple(tuple(w) for w in self.fp_widths))
        k = self.num_levels
        if k < 1 or len(self.ratios) != k or len(self.sa_widths) != k or len(self.fp_widths) != k:
            raise ValueError("ratios, sa_widths and fp_widths need one entry per level")
        if not all(0 < r <= 1 for r in self.ratios):
            raise ValueError("downsample ratios must be in (0, 1]")
        if self.out_width != 128 or self.fp_widths[-1][-1] != 128:
            raise ValueError("point branch output width is fixed at 128")
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")


@dataclass(frozen=True)
class SconvConfig:
    num_stages: int = 3
    channels: tuple = (16, 32, 64)
    kernel: int = 3
    out_width: int = 64

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != self.num_stages or self.num_stages < 1:
            raise ValueError("channels needs one entry per stage")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        if self.out_width != 64:
            raise ValueError("sparse-conv branch output width is fixed at 64")


@dataclass(frozen=True)
class PredictorConfig:
    mlp_depth: int = 1
    hidden: int = 64

    def __post_init__(self):
        if self.mlp_depth < 1:
            raise ValueError("mlp_depth must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    hpnet: HpnetConfig = field(default_factory=HpnetConfig)
    sconv: SconvConfig = field(default_factory=SconvConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    threshold: float = 0.5  # keep/drop cut for denoised clouds


@dataclass
class LevelPlan:
    centers: np.ndarray   # indices into the previous level
    groups: np.ndarray    # (m, neighbors) indices into the previous level
    rel: np.ndarray       # (m, neighbors, 3) member offset from its centre
    interp_idx: np.ndarray  # (n_prev, j) nearest centres of each previous-level point
    interp_w: np.ndarray    # (n_prev, j) normalised inverse-distance weights


@dataclass
class ScenePlan:
    voxels: SparseVoxelSet
    levels: list
    rulebook: np.ndarray
    bev_index: np.ndarray

    def __len__(self):
        return len(self.voxels)


def plan_scene(voxels: SparseVoxelSet, cfg: ModelConfig = ModelConfig()) -> ScenePlan:
    n = len(voxels)
    if n == 0:
        raise ValueError("cannot plan an empty voxel set")
    hp = cfg.hpnet
    pos = voxels.centers
    levels = []
    start = hp.fps_start
    if not 0 <= start < n:
        raise ValueError(f"fps_start {start} out of range for {n} voxels")
    for ratio in hp.ratios:
        n_prev = pos.shape[0]
        m = max(1, math.ceil(n_prev * ratio))
        centers = farthest_point_sampling(pos, m, start)
        start = 0
        cpos = pos[centers]
        tree = KdTree(pos)
        groups, _ = tree.query_knn(cpos, hp.neighbors)
        if groups.shape[1] < hp.neighbors:
            # fewer points than the cluster size: repeat members (max-pool is unaffected)
            groups = groups[:, np.arange(hp.neighbors) % groups.shape[1]]
        rel = pos[groups] - cpos[:, None, :]
        ctree = KdTree(cpos)
        nn, dist = ctree.query_knn(pos, 3)
        w = 1.0 / (dist + 1e-8)
        w /= w.sum(axis=1, keepdims=True)
        levels.append(LevelPlan(centers, groups, rel, nn, w))
        pos = cpos
    rulebook = subm_rulebook(voxels.coords, cfg.sconv.kernel)
    return ScenePlan(voxels, levels, rulebook, bev_cell_index(voxels))


def hpnet_forward(store: ParamStore, plan: ScenePlan, cfg: HpnetConfig, mode: str = "train") -> Tensor:
    feats = [Tensor(plan.voxels.features)]
    for li, (lp, widths) in enumerate(zip(plan.levels, cfg.sa_widths)):
        prev = feats[-1]
        m, k = lp.groups.shape
        grouped = take(prev, lp.groups)  # (m, k, c)
        x = concat([Tensor(lp.rel), grouped], axis=-1)
        x = reshape(x, (m * k, x.shape[-1]))
        x = mlp_apply(store, f"hpnet.sa{li}", x, widths, "relu", norm=True, mode=mode)
        feats.append(max_axis(reshape(x, (m, k, x.shape[-1])), axis=1))
    cur = feats[-1]
    for step, li in enumerate(reversed(range(len(plan.levels)))):
        lp = plan.levels[li]
        near = take(cur, lp.interp_idx)  # (n_prev, j, c)
        interp = tsum(mul(near, Tensor(lp.interp_w[:, :, None])), axis=1)
        x = concat([interp, feats[li]], axis=-1)
        cur = mlp_apply(store, f"hpnet.fp{li}", x, cfg.fp_widths[step], "relu", norm=True, mode=mode)
    return cur


def sconvnet_forward(store: ParamStore, plan: ScenePlan, cfg: SconvConfig, mode: str = "train"):
    """Returns ``(f_conv, last_stage)``."""
    x = Tensor(plan.voxels.features)
    stages = []
    for si, c in enumerate(cfg.channels):
        x = subm_conv_apply(store, f"sconv.s{si}", plan.rulebook, x, c, k=cfg.kernel, bias=False)
        x = relu(batchnorm_apply(store, f"sconv.s{si}.bn", x, mode))
        stages.append(x)
    f_conv = linear(store, "sconv.mix", concat(stages, axis=-1), cfg.out_width)
    return f_conv, stages[-1]


def noise_predict(store: ParamStore, h: Tensor, f_conv: Tensor, cfg: PredictorConfig) -> Tensor:
    """Per-voxel validity score in (0, 1), shape (N, 1)."""
    if h.shape[0] != f_conv.shape[0]:
        raise ValueError(f"row mismatch: {h.shape[0]} vs {f_conv.shape[0]}")
    x = concat([h, f_conv], axis=-1)
    for i in range(cfg.mlp_depth - 1):
        x = relu(linear(store, f"pred.hidden{i}", x, cfg.hidden))
    return sigmoid(linear(store, "pred.out", x, 1, init="xavier"))


@dataclass
class HmsdOutput:
    pred_mask: Tensor
    bev: BevGrid
    h: Tensor
    f_conv: Tensor
    last_stage: Tensor

    @property
    def mask_values(self) -> np.ndarray:
        return self.pred_mask.data.reshape(-1)


def hmsd_forward(store: ParamStore, plan: ScenePlan, cfg: ModelConfig = ModelConfig(),
                 mode: str = "train", mask_override=None) -> HmsdOutput:
    """Both branches, the noise predictor, gating and BEV projection.

    ``mask_override`` replaces the predicted mask in the gating step (test hook).
    """
    h = hpnet_forward(store, plan, cfg.hpnet, mode)
    f_conv, last = sconvnet_forward(store, plan, cfg.sconv, mode)
    pred = noise_predict(store, h, f_conv, cfg.predictor)
    gate = pred if mask_override is None else Tensor(np.asarray(mask_override, dtype=np.float64).reshape(-1, 1))
    gated = mul(last, gate)
    bev = bev_project(plan.voxels, gated, cell_index=plan.bev_index)
    return HmsdOutput(pred, bev, h, f_conv, last)


def point_scores(voxels: SparseVoxelSet, voxel_scores: np.ndarray) -> np.ndarray:
    """Spread per-voxel scores back to the cloud; out-of-range points score 0."""
    voxel_scores = np.asarray(voxel_scores, dtype=np.float64).reshape(-1)
    pv = voxels.point_voxel
    out = np.zeros(pv.size)
    sel = pv >= 0
    out[sel] = voxel_scores[pv[sel]]
    return out
