"""Classification, regression and mask losses plus their weighted total.

Each loss is a single autodiff op (mean reduction) with a hand-written
gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, add, as_tensor, make, mul

PROB_EPS = 1e-7


def _check(pred: Tensor, target) -> np.ndarray:
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    return target


def bce_loss(pred, target) -> Tensor:
    """Mean binary cross-entropy; probabilities are clamped to [1e-7, 1 - 1e-7]."""
    pred = as_tensor(pred)
    t = _check(pred, target)
    p = np.clip(pred.data, PROB_EPS, 1 - PROB_EPS)
    inside = (pred.data >= PROB_EPS) & (pred.data <= 1 - PROB_EPS)
    n = max(p.size, 1)
    value = -(t * np.log(p) + (1 - t) * np.log1p(-p)).sum() / n

    def bw(g):
        return (g * inside * (-t / p + (1 - t) / (1 - p)) / n,)

    return make(np.float64(value), (pred,), bw)


def focal_loss(pred, target, gamma_f: float = 2.0, alpha_f: float = 0.25) -> Tensor:
    """Mean of ``-alpha_t (1 - p_t)^gamma log p_t`` over all elements."""
    if gamma_f < 0 or not 0 < alpha_f < 1:
        raise ValueError("focal loss needs gamma_f >= 0 and 0 < alpha_f < 1")
    pred = as_tensor(pred)
    t = _check(pred, target)
    p = np.clip(pred.data, PROB_EPS, 1 - PROB_EPS)
    inside = (pred.data >= PROB_EPS) & (pred.data <= 1 - PROB_EPS)
    pt = np.where(t > 0.5, p, 1 - p)
    at = np.where(t > 0.5, alpha_f, 1 - alpha_f)
    sign = np.where(t > 0.5, 1.0, -1.0)
    q = 1 - pt
    n = max(p.size, 1)
    value = (-at * q ** gamma_f * np.log(pt)).sum() / n

    def bw(g):
        if gamma_f == 0:
            dpt = -at / pt
        else:
            dpt = -at * (-gamma_f * q ** (gamma_f - 1) * np.log(pt) + q ** gamma_f / pt)
        return (g * inside * sign * dpt / n,)

    return make(np.float64(value), (pred,), bw)


def smooth_l1_loss(pred, target) -> Tensor:
    """Mean Smooth L1 with the quadratic/linear transition at |d| = 1."""
    pred = as_tensor(pred)
    t = _check(pred, target)
    d = pred.data - t
    ad = np.abs(d)
    quad = ad < 1.0
    n = max(d.size, 1)
    value = np.where(quad, 0.5 * d * d, ad - 0.5).sum() / n

    def bw(g):
        return (g * np.where(quad, d, np.sign(d)) / n,)

    return make(np.float64(value), (pred,), bw)


def mse_loss(pred, target) -> Tensor:
    pred = as_tensor(pred)
    t = _check(pred, target)
    d = pred.data - t
    n = max(d.size, 1)
    return make(np.float64((d * d).sum() / n), (pred,), lambda g: (g * 2.0 * d / n,))


def mask_loss(pred_mask, gt_mask) -> Tensor:
    """Smooth L1 between the soft per-voxel mask and the binary supervision mask."""
    pred_mask = as_tensor(pred_mask)
    gt = np.asarray(getattr(gt_mask, "values", gt_mask), dtype=np.float64)
    if pred_mask.size != gt.size:
        raise ValueError(f"mask length mismatch: {pred_mask.size} vs {gt.size}")
    return smooth_l1_loss(pred_mask, gt.reshape(pred_mask.shape))


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 50.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    cls: Tensor
    reg: Tensor
    msk: Tensor
    total: Tensor

    def values(self) -> dict:
        return {k: float(getattr(self, k).data) for k in ("cls", "reg", "msk", "total")}


def total_loss(cls, reg, msk, w: LossWeights = LossWeights()) -> LossBreakdown:
    cls, reg, msk = as_tensor(cls), as_tensor(reg), as_tensor(msk)
    total = add(add(mul(cls, w.alpha), mul(reg, w.beta)), mul(msk, w.gamma))
    return LossBreakdown(cls, reg, msk, total)
