import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import brute_dists
from radar_denoise.cloud import PointCloud
from radar_denoise.metrics import chamfer_distance, confusion, mask_metrics, rank_auc


def pair_auc(scores, truth):
    pos, neg = scores[truth == 1], scores[truth == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (pos.size * neg.size)


def test_perfect_and_inverted():
    t = np.array([1, 0, 1, 1, 0])
    m = mask_metrics(t.astype(float), t)
    assert (m.precision, m.recall, m.f1, m.auc) == (1.0, 1.0, 1.0, 1.0)
    inv = mask_metrics(1.0 - t, t)
    assert (inv.precision, inv.recall, inv.f1, inv.auc) == (0.0, 0.0, 0.0, 0.0)


def test_length_mismatch_and_empty():
    with pytest.raises(ValueError):
        mask_metrics(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        mask_metrics(np.zeros(0), np.zeros(0))


def test_auc_matches_pair_counting():
    rng = np.random.default_rng(0)
    for _ in range(10):
        s = np.round(rng.random(200), 2)  # ties included
        t = rng.integers(0, 2, 200)
        assert abs(mask_metrics(s, t).auc - pair_auc(s, t)) < 1e-12


def test_auc_single_class_nan():
    assert np.isnan(rank_auc(np.array([0.1, 0.2]), np.array([1, 1])))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), a=st.floats(0.1, 10), b=st.floats(-5, 5))
def test_auc_monotone_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    s = rng.random(60)
    t = rng.integers(0, 2, 60)
    t[0], t[1] = 0, 1
    base = rank_auc(s, t)
    assert abs(rank_auc(a * s + b, t) - base) < 1e-12
    assert abs(rank_auc(s ** 3, t) - base) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 80))
def test_hard_mask_confusion_oracle(seed, n):
    rng = np.random.default_rng(seed)
    p, t = rng.integers(0, 2, n), rng.integers(0, 2, n)
    m = mask_metrics(p.astype(float), t)
    tp = sum(1 for a, b in zip(p, t) if a and b)
    fp = sum(1 for a, b in zip(p, t) if a and not b)
    fn = sum(1 for a, b in zip(p, t) if not a and b)
    assert confusion(p, t)[:3] == (tp, fp, fn)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    assert m.precision == prec and m.recall == rec
    assert m.f1 == pytest.approx(2 * prec * rec / (prec + rec) if prec + rec else 0.0, abs=1e-15)
    assert m.accuracy == (p == t).mean()


def test_chamfer_examples():
    a = PointCloud.lidar(np.random.default_rng(1).random((20, 3)))
    assert chamfer_distance(a, a) == 0.0
    assert chamfer_distance(PointCloud.lidar([[0, 0, 0]]), PointCloud.lidar([[1, 0, 0]])) == 2.0
    with pytest.raises(ValueError):
        chamfer_distance(a, PointCloud.lidar(np.zeros((0, 3))))


def test_chamfer_brute_force_and_symmetry():
    rng = np.random.default_rng(2)
    for _ in range(5):
        a, b = rng.random((300, 3)), rng.random((150, 3)) * 2
        d = brute_dists(a, b)
        expect = d.min(axis=1).mean() + d.min(axis=0).mean()
        assert abs(chamfer_distance(a, b) - expect) < 1e-12
        assert chamfer_distance(a, b) == chamfer_distance(b, a)
