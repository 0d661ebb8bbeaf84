import numpy as np
import pytest

from helpers import grad_check
from radar_denoise import autograd as ag
from radar_denoise.autograd import ParamStore, Tensor
from radar_denoise.cloud import GtBox, PointCloud
from radar_denoise.head import assign_targets, head_forward, head_losses
from radar_denoise.losses import mask_loss, total_loss
from radar_denoise.model import (ModelConfig, PredictorConfig, hmsd_forward, hpnet_forward,
                                 noise_predict, plan_scene, point_scores, sconvnet_forward)
from radar_denoise.voxel import VoxelGridConfig, bev_project, voxelize

CFG = ModelConfig()


def voxel_scene(n, seed=0, spread=None):
    """``n`` occupied voxels, one point each, clustered enough to have neighbours."""
    rng = np.random.default_rng(seed)
    grid = VoxelGridConfig()
    side = spread or max(4, int(round((n * 4) ** (1 / 3))) + 2)
    cells = set()
    while len(cells) < n:
        c = tuple(int(v) for v in rng.integers(0, side, 3) + np.array([90, 90, 1]))
        cells.add(c)
    cells = np.array(sorted(cells))
    xyz = grid.lower + (cells + rng.uniform(0.2, 0.8, cells.shape)) * np.array(grid.size)
    data = np.column_stack([xyz, rng.uniform(0, 3, n), rng.normal(size=n)])
    return voxelize(PointCloud.radar(data), grid)


@pytest.mark.parametrize("n", [1, 7, 100, 4096])
def test_shape_contract(n):
    v = voxel_scene(n)
    assert len(v) == n
    plan = plan_scene(v, CFG)
    store = ParamStore(0)
    out = hmsd_forward(store, plan, CFG)
    assert out.h.shape == (n, 128)
    assert out.f_conv.shape == (n, 64)
    assert ag.concat([out.h, out.f_conv]).shape == (n, 192)
    assert out.pred_mask.shape == (n, 1)
    assert np.all((out.mask_values > 0) & (out.mask_values < 1))


def test_zero_final_layer_gives_half():
    v = voxel_scene(30)
    store = ParamStore(0)
    plan = plan_scene(v, CFG)
    hmsd_forward(store, plan, CFG)
    store.params["pred.out.w"].data[:] = 0
    store.params["pred.out.b"].data[:] = 0
    assert np.array_equal(hmsd_forward(store, plan, CFG).mask_values, np.full(30, 0.5))


def test_default_predictor_depth_is_one():
    assert PredictorConfig().mlp_depth == 1
    store = ParamStore(0)
    hmsd_forward(store, plan_scene(voxel_scene(10), CFG), CFG)
    assert not any(k.startswith("pred.hidden") for k in store.params)


def test_predictor_row_mismatch():
    with pytest.raises(ValueError):
        noise_predict(ParamStore(), Tensor(np.zeros((3, 128))), Tensor(np.zeros((4, 64))), PredictorConfig())


def test_deeper_predictor_has_hidden_layers():
    cfg = ModelConfig(predictor=PredictorConfig(mlp_depth=3))
    store = ParamStore(0)
    out = hmsd_forward(store, plan_scene(voxel_scene(12), cfg), cfg)
    assert {"pred.hidden0.w", "pred.hidden1.w"} <= set(store.params)
    assert out.pred_mask.shape == (12, 1)


def test_forward_deterministic():
    v = voxel_scene(80, 1)
    a = hmsd_forward(ParamStore(3), plan_scene(v, CFG), CFG, mode="eval")
    b = hmsd_forward(ParamStore(3), plan_scene(v, CFG), CFG, mode="eval")
    assert np.array_equal(a.mask_values, b.mask_values)
    assert np.array_equal(a.bev.cells, b.bev.cells)


def test_single_voxel_sconv_is_finite_and_deterministic():
    v = voxel_scene(1)
    plan = plan_scene(v, CFG)
    assert np.all(plan.rulebook[0, np.arange(27) != 13] == 1)  # only the centre tap is active
    f1, last1 = sconvnet_forward(ParamStore(0), plan, CFG.sconv, "eval")
    f2, _ = sconvnet_forward(ParamStore(0), plan, CFG.sconv, "eval")
    assert np.all(np.isfinite(f1.data)) and np.array_equal(f1.data, f2.data)
    assert last1.shape == (1, 64)


def test_sparsity_preserved_through_sconv():
    v = voxel_scene(200, 2)
    plan = plan_scene(v, CFG)
    _, last = sconvnet_forward(ParamStore(0), plan, CFG.sconv)
    assert last.shape[0] == len(v)
    assert np.array_equal(plan.voxels.coords, v.coords)


def test_hpnet_permutation_equivariant():
    v = voxel_scene(60, 3)
    n = len(v)
    perm = np.random.default_rng(3).permutation(n)
    store = ParamStore(1)
    base = hpnet_forward(store, plan_scene(v, CFG), CFG.hpnet, "eval").data
    import dataclasses
    pv = dataclasses.replace(v, coords=v.coords[perm], features=v.features[perm])
    start = int(np.flatnonzero(perm == 0)[0])  # same first FPS pick as the original order
    cfg = dataclasses.replace(CFG, hpnet=dataclasses.replace(CFG.hpnet, fps_start=start))
    permuted = hpnet_forward(store, plan_scene(pv, cfg), cfg.hpnet, "eval").data
    assert np.allclose(permuted, base[perm], rtol=0, atol=1e-10)


def test_gating_hook_identity_and_annihilation():
    v = voxel_scene(40, 4)
    plan = plan_scene(v, CFG)
    store = ParamStore(0)
    ones = hmsd_forward(store, plan, CFG, "eval", mask_override=np.ones(40))
    ungated = bev_project(v, ones.last_stage)
    assert np.array_equal(ones.bev.cells, ungated.cells)
    zeros = hmsd_forward(store, plan, CFG, "eval", mask_override=np.zeros(40))
    assert not zeros.bev.cells.any()


def test_gating_monotone():
    v = voxel_scene(40, 5)
    plan = plan_scene(v, CFG)
    store = ParamStore(0)
    rng = np.random.default_rng(5)
    m = rng.random(40)
    a = hmsd_forward(store, plan, CFG, "eval", mask_override=m).bev.cells
    m2 = m.copy()
    m2[rng.choice(40, 10, replace=False)] *= rng.random(10)
    b = hmsd_forward(store, plan, CFG, "eval", mask_override=m2).bev.cells
    assert np.all(np.abs(b) <= np.abs(a) + 1e-15)


def test_point_scores_spread_and_out_of_range():
    grid = VoxelGridConfig()
    cloud = PointCloud.radar([[0.05, 0.05, 0.05, 1, 0], [0.06, 0.06, 0.06, 1, 0], [99, 0, 0, 1, 0]])
    v = voxelize(cloud, grid)
    assert point_scores(v, np.array([0.7])).tolist() == [0.7, 0.7, 0.0]


def test_end_to_end_gradient_50_voxels():
    v = voxel_scene(50, 6)
    plan = plan_scene(v, CFG)
    box = GtBox(*(v.centers[:, :3].mean(axis=0)), 2.0, 4.0, 1.5, 0.3)
    targets = assign_targets([box], v.cfg)
    gt = (np.random.default_rng(6).random(50) > 0.4).astype(float)
    store = ParamStore(2)

    def loss():
        out = hmsd_forward(store, plan, CFG, "train")
        head = head_forward(store, out.bev)
        l_cls, l_reg = head_losses(head, targets)
        return total_loss(l_cls, l_reg, mask_loss(out.pred_mask, gt)).total

    loss()
    rng = np.random.default_rng(7)
    for name, p in store.params.items():  # move off the symmetric zero/one initial values
        if name.endswith((".b", ".beta", ".gamma")):
            p.data += rng.normal(scale=0.1, size=p.shape)
    err = grad_check(loss, list(store.params.values()), max_entries=4)
    assert err < 1e-3
