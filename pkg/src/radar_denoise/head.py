"""Minimal anchor-free BEV detection head and centre-cell target assignment."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .autograd import ParamStore, Tensor, relu, reshape, sigmoid, take
from .layers import conv2d_apply
from .losses import bce_loss, focal_loss, mse_loss, smooth_l1_loss
from .voxel import BevGrid, VoxelGridConfig

log = logging.getLogger(__name__)

REG_DIM = 7  # dx, dy, dz, log w, log l, log h, yaw


@dataclass(frozen=True)
class HeadConfig:
    channels: int = 32


@dataclass
class HeadOutput:
    cls_prob: Tensor  # (W, H)
    box_reg: Tensor   # (W, H, 7)


@dataclass
class HeadTargets:
    cls_target: np.ndarray  # (W, H) in {0, 1}
    reg_target: np.ndarray  # (W, H, 7), zero off the positive cells
    positive: np.ndarray    # (W, H) bool
    collisions: int = 0


def head_forward(store: ParamStore, bev: BevGrid, cfg: HeadConfig = HeadConfig()) -> HeadOutput:
    x = bev.features
    if x.ndim != 3 or x.shape[:2] != (bev.width, bev.height):
        raise ValueError(f"BEV features {x.shape} do not match a {bev.width}x{bev.height} grid")
    x = relu(conv2d_apply(store, "head.conv0", x, cfg.channels))
    x = relu(conv2d_apply(store, "head.conv1", x, cfg.channels))
    cls = conv2d_apply(store, "head.cls", x, 1, k=1, init="xavier")
    reg = conv2d_apply(store, "head.reg", x, REG_DIM, k=1, init="xavier")
    return HeadOutput(sigmoid(reshape(cls, (bev.width, bev.height))), reg)


def assign_targets(boxes, grid: VoxelGridConfig) -> HeadTargets:
    """Mark the BEV cell holding each box centre as positive.

    A later box landing in an already claimed cell replaces it; such
    collisions are counted and logged.
    """
    w, h = grid.bev_shape
    csx, csy = grid.bev_cell_size
    x0, y0 = grid.range[0], grid.range[2]
    cls = np.zeros((w, h))
    reg = np.zeros((w, h, REG_DIM))
    collisions = 0
    for b in boxes:
        ix = math.floor((b.cx - x0) / csx)
        iy = math.floor((b.cy - y0) / csy)
        if not (0 <= ix < w and 0 <= iy < h):
            continue
        if cls[ix, iy]:
            collisions += 1
        cls[ix, iy] = 1.0
        reg[ix, iy] = (
            b.cx - (x0 + (ix + 0.5) * csx),
            b.cy - (y0 + (iy + 0.5) * csy),
            b.cz,
            math.log(b.w),
            math.log(b.l),
            math.log(b.h),
            b.yaw,
        )
    if collisions:
        log.info("assign_targets collisions=%d", collisions)
    return HeadTargets(cls, reg, cls > 0, collisions)


def head_losses(out: HeadOutput, targets: HeadTargets, cls_loss: str = "focal",
                reg_loss: str = "smooth_l1", focal=(2.0, 0.25)):
    """Classification loss over every cell, regression loss over positive cells."""
    if cls_loss == "focal":
        l_cls = focal_loss(out.cls_prob, targets.cls_target, *focal)
    elif cls_loss == "bce":
        l_cls = bce_loss(out.cls_prob, targets.cls_target)
    else:
        raise ValueError(f"unknown classification loss {cls_loss!r}")
    w, h, _ = out.box_reg.shape
    pos = np.flatnonzero(targets.positive.reshape(-1))
    rows = take(reshape(out.box_reg, (w * h, REG_DIM)), pos)
    tgt = targets.reg_target.reshape(w * h, REG_DIM)[pos]
    if reg_loss == "smooth_l1":
        l_reg = smooth_l1_loss(rows, tgt)
    elif reg_loss == "mse":
        l_reg = mse_loss(rows, tgt)
    else:
        raise ValueError(f"unknown regression loss {reg_loss!r}")
    return l_cls, l_reg
