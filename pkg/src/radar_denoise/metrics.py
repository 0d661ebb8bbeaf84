"""Mask quality metrics and chamfer distance."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .cloud import PointCloud
from .spatial import KdTree


@dataclass(frozen=True)
class MaskMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    auc: float
    threshold: float = 0.5

    def as_dict(self) -> dict:
        return asdict(self)


def confusion(pred_bin: np.ndarray, truth: np.ndarray):
    pred_bin = np.asarray(pred_bin, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.sum(pred_bin & truth))
    fp = int(np.sum(pred_bin & ~truth))
    fn = int(np.sum(~pred_bin & truth))
    tn = int(np.sum(~pred_bin & ~truth))
    return tp, fp, fn, tn


def f1_from_counts(tp: int, fp: int, fn: int) -> tuple:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def rank_auc(scores: np.ndarray, truth: np.ndarray) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2).

    NaN when one of the classes is absent.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[truth].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def mask_metrics(pred, truth, threshold: float = 0.5) -> MaskMetrics:
    pred = np.asarray(getattr(pred, "values", pred), dtype=np.float64).reshape(-1)
    truth = np.asarray(getattr(truth, "values", truth)).reshape(-1)
    if pred.size != truth.size:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} labels")
    if truth.size == 0:
        raise ValueError("mask_metrics needs at least one element")
    tp, fp, fn, tn = confusion(pred >= threshold, truth > 0)
    precision, recall, f1 = f1_from_counts(tp, fp, fn)
    return MaskMetrics(precision, recall, f1, (tp + tn) / truth.size, rank_auc(pred, truth > 0), threshold)


def chamfer_distance(a, b) -> float:
    """Symmetric mean nearest-neighbour distance between two point sets."""
    pa = a.xyz if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64)[:, :3]
    pb = b.xyz if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64)[:, :3]
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("chamfer distance of an empty cloud is undefined")
    _, dab = KdTree(pb).query_knn(pa, 1)
    _, dba = KdTree(pa).query_knn(pb, 1)
    return float(dab.mean() + dba.mean())
