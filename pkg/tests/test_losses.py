import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import grad_check
from radar_denoise.autograd import Tensor
from radar_denoise.losses import (LossWeights, bce_loss, focal_loss, mask_loss, mse_loss,
                                  smooth_l1_loss, total_loss)


def probs(rng, n):
    return rng.uniform(0.02, 0.98, n)


def test_bce_closed_form():
    assert abs(float(bce_loss(Tensor([0.5]), [1.0]).data) - math.log(2)) < 1e-12


def test_bce_at_clamp_bounds():
    assert float(bce_loss(Tensor([1 - 1e-7, 1e-7]), [1.0, 0.0]).data) < 1e-6


def test_bce_formula_oracle():
    rng = np.random.default_rng(0)
    p, t = probs(rng, 50), rng.integers(0, 2, 50).astype(float)
    expect = np.mean([-(ti * math.log(pi) + (1 - ti) * math.log(1 - pi)) for pi, ti in zip(p, t)])
    assert abs(float(bce_loss(Tensor(p), t).data) - expect) < 1e-12


def test_shape_mismatch():
    for fn in (bce_loss, focal_loss, smooth_l1_loss, mse_loss, mask_loss):
        with pytest.raises(ValueError):
            fn(Tensor(np.full(3, 0.5)), np.zeros(4))


def test_focal_reduces_to_half_bce():
    rng = np.random.default_rng(1)
    p, t = probs(rng, 100), rng.integers(0, 2, 100).astype(float)
    f = float(focal_loss(Tensor(p), t, 0.0, 0.5).data)
    assert abs(f - 0.5 * float(bce_loss(Tensor(p), t).data)) < 1e-9


def test_focal_closed_form():
    v = float(focal_loss(Tensor([0.9]), [1.0], 2.0, 0.25).data)
    assert abs(v - (-0.25 * 0.01 * math.log(0.9))) < 1e-15
    assert abs(v - 2.634e-4) < 1e-7


def test_focal_formula_oracle():
    rng = np.random.default_rng(2)
    p, t = probs(rng, 40), rng.integers(0, 2, 40).astype(float)
    terms = []
    for pi, ti in zip(p, t):
        pt, at = (pi, 0.25) if ti else (1 - pi, 0.75)
        terms.append(-at * (1 - pt) ** 2 * math.log(pt))
    assert abs(float(focal_loss(Tensor(p), t).data) - np.mean(terms)) < 1e-12


def test_focal_bad_params():
    with pytest.raises(ValueError):
        focal_loss(Tensor([0.5]), [1.0], -1.0, 0.25)
    with pytest.raises(ValueError):
        focal_loss(Tensor([0.5]), [1.0], 2.0, 1.0)


@pytest.mark.parametrize("d,expect", [(0.5, 0.125), (2.0, 1.5), (1.0, 0.5), (-2.0, 1.5)])
def test_smooth_l1_branches(d, expect):
    assert float(smooth_l1_loss(Tensor([d]), [0.0]).data) == expect


def test_smooth_l1_c1_at_transition():
    eps = 1e-9
    below = float(smooth_l1_loss(Tensor([1 - eps]), [0.0]).data)
    above = float(smooth_l1_loss(Tensor([1 + eps]), [0.0]).data)
    assert abs(below - 0.5) < 1e-6 and abs(above - 0.5) < 1e-6
    # derivative of each branch evaluated at the boundary
    quad_slope = 1 - eps
    lin_slope = 1.0
    assert abs(quad_slope - lin_slope) < 1e-6
    for x in (1 - 1e-7, 1 + 1e-7):
        t = Tensor(np.array([x]), requires_grad=True)
        from radar_denoise.autograd import backward
        backward(smooth_l1_loss(t, [0.0]))
        assert abs(t.grad[0] - 1.0) < 1e-6


def test_mse_examples():
    assert float(mse_loss(Tensor([1.0, 2.0]), [1.0, 2.0]).data) == 0.0
    assert float(mse_loss(Tensor([3.0, 4.0]), [1.0, 2.0]).data) == 4.0


def test_mask_loss_examples():
    gt = np.array([1.0, 0.0, 1.0])
    assert float(mask_loss(Tensor(gt.reshape(3, 1)), gt).data) == 0.0
    assert float(mask_loss(Tensor(np.full(4, 0.5)), np.ones(4)).data) == 0.125
    rng = np.random.default_rng(3)
    p, g = rng.random(20), rng.integers(0, 2, 20)
    assert float(mask_loss(Tensor(p), g).data) == float(smooth_l1_loss(Tensor(p), g.astype(float)).data)


def test_total_loss_exact():
    b = total_loss(0.1, 0.2, 0.01, LossWeights(1, 2, 50))
    assert float(b.total.data) == 1.0
    assert float(total_loss(0, 0, 0).total.data) == 0.0
    w0 = LossWeights(1, 2, 0)
    assert float(total_loss(0.3, 0.1, 5.0, w0).total.data) == float(total_loss(0.3, 0.1, 9.0, w0).total.data)


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(1, -2, 50)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 20))
def test_losses_nonnegative_zero_at_target(seed, n):
    rng = np.random.default_rng(seed)
    t = rng.integers(0, 2, n).astype(float)
    p = probs(rng, n)
    for fn in (bce_loss, focal_loss, smooth_l1_loss, mse_loss):
        assert float(fn(Tensor(p), t).data) >= 0
    for fn in (smooth_l1_loss, mse_loss):
        assert float(fn(Tensor(t), t).data) == 0.0
    clamped = np.clip(t, 1e-7, 1 - 1e-7)
    assert float(bce_loss(Tensor(clamped), t).data) < 1e-6


@pytest.mark.parametrize("name", ["bce", "focal", "smooth_l1", "mse", "mask", "total"])
def test_loss_gradients(name):
    rng = np.random.default_rng(4)
    p = Tensor(probs(rng, 12), requires_grad=True)
    t = rng.integers(0, 2, 12).astype(float)
    r = Tensor(rng.normal(scale=2.0, size=12), requires_grad=True)
    fns = {
        "bce": lambda: bce_loss(p, t),
        "focal": lambda: focal_loss(p, t),
        "smooth_l1": lambda: smooth_l1_loss(r, t),
        "mse": lambda: mse_loss(r, t),
        "mask": lambda: mask_loss(p, t),
        "total": lambda: total_loss(focal_loss(p, t), smooth_l1_loss(r, t), mask_loss(p, t)).total,
    }
    assert grad_check(fns[name], [p, r] if name == "total" else [r if name in ("smooth_l1", "mse") else p]) < 1e-4
