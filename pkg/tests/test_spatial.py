import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from helpers import brute_dists, brute_knn, brute_radius
from radar_denoise.spatial import (KdTree, build_kdtree, farthest_point_sampling, knn,
                                   radius_neighbors)


def test_empty_tree_returns_empty_sets():
    tree = build_kdtree(np.zeros((0, 3)))
    assert len(tree) == 0
    ns = radius_neighbors(tree, [0, 0, 0], 1.0)
    assert ns.indices.size == 0 and ns.distances.size == 0
    assert not tree.any_within(np.zeros((2, 3)), 1.0).any()


def test_root_splits_x_at_median():
    pts = np.zeros((7, 3))
    pts[:, 0] = [5.0, 1.0, 3.0, 0.0, 6.0, 2.0, 4.0]
    tree = KdTree(pts, leaf_size=1)
    assert tree.axis[0] == 0
    assert tree.split[0] == 3.0
    assert tree.point[0] == 2


def test_split_axis_cycles_with_depth():
    rng = np.random.default_rng(1)
    tree = KdTree(rng.random((300, 3)), leaf_size=1)
    depth = {0: 0}
    for node in range(tree.num_nodes):
        for child in (tree.left[node], tree.right[node]):
            if child >= 0:
                depth[child] = depth[node] + 1
        if not tree.is_leaf(node):
            assert tree.axis[node] == depth[node] % 3


def test_every_point_reachable_once_and_findable():
    rng = np.random.default_rng(2)
    pts = rng.random((1000, 3))
    tree = KdTree(pts)
    inner = tree.point[tree.point >= 0]
    all_idx = np.concatenate([inner, tree.order])
    assert np.array_equal(np.sort(all_idx), np.arange(1000))
    for i in range(1000):
        assert i in radius_neighbors(tree, pts[i], 1e-9).indices


def test_build_is_deterministic():
    pts = np.random.default_rng(3).random((500, 3))
    a, b = KdTree(pts), KdTree(pts.copy())
    for name in ("axis", "split", "point", "left", "right", "lo", "hi", "order"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_radius_is_strict():
    pts = np.array([[0.5, 0, 0], [0.0, 0, 0], [0.0, 0.49999, 0]])
    ns = radius_neighbors(KdTree(pts), [0, 0, 0], 0.5)
    assert set(ns.indices.tolist()) == {1, 2}
    assert ns.distances[0] == 0.0


def test_radius_rejects_nonpositive_tau():
    tree = KdTree(np.zeros((1, 3)))
    for tau in (0.0, -1.0):
        with pytest.raises(ValueError):
            radius_neighbors(tree, [0, 0, 0], tau)


def test_radius_matches_brute_force():
    rng = np.random.default_rng(4)
    pts = rng.random((500, 3)) * 3
    tree = KdTree(pts)
    for q in rng.random((50, 3)) * 3:
        ns = radius_neighbors(tree, q, 0.5)
        assert set(ns.indices.tolist()) == brute_radius(pts, q, 0.5)
        assert np.all(np.diff(ns.distances) >= 0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 300), tau=st.floats(0.01, 2.0), seed=st.integers(0, 10 ** 6),
       leaf=st.integers(1, 40), grid=st.booleans())
def test_radius_and_counts_property(n, tau, seed, leaf, grid):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 3)) * 2
    if grid:
        pts = np.round(pts * 4) / 4  # many exact ties and duplicates
    queries = np.vstack([pts[: min(n, 10)], rng.random((10, 3)) * 2])
    tree = KdTree(pts, leaf_size=leaf)
    counts = tree.count_radius(queries, tau)
    exists = tree.any_within(queries, tau)
    for q, c, e in zip(queries, counts, exists):
        expect = brute_radius(pts, q, tau)
        assert set(radius_neighbors(tree, q, tau).indices.tolist()) == expect
        assert c == len(expect)
        assert e == bool(expect)


def test_knn_all_points_sorted():
    rng = np.random.default_rng(5)
    pts = rng.random((30, 3))
    ns = knn(pts, [0.5, 0.5, 0.5], 30)
    assert sorted(ns.indices.tolist()) == list(range(30))
    assert np.all(np.diff(ns.distances) >= 0)


def test_knn_k_larger_than_n_returns_all():
    pts = np.random.default_rng(6).random((5, 3))
    assert knn(pts, [0, 0, 0], 9).indices.size == 5


def test_knn_self_query():
    pts = np.random.default_rng(7).random((50, 3))
    ns = knn(pts, pts[17], 1)
    assert ns.indices.tolist() == [17] and ns.distances[0] == 0.0


def test_knn_empty_positions_raises():
    with pytest.raises(ValueError):
        knn(np.zeros((0, 3)), [0, 0, 0], 1)


def test_knn_matches_sort_oracle():
    rng = np.random.default_rng(8)
    pts = rng.random((200, 3))
    for q in rng.random((20, 3)):
        ns = knn(pts, q, 16)
        idx, d = brute_knn(pts, q, 16)
        assert ns.indices.tolist() == idx.tolist()
        assert np.allclose(ns.distances, d, rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 200), k=st.integers(1, 20), seed=st.integers(0, 10 ** 6), grid=st.booleans())
def test_knn_property_with_ties(n, k, seed, grid):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 3))
    if grid:
        pts = np.round(pts * 3) / 3
    queries = np.vstack([pts[:3], rng.random((5, 3))])
    idx, _ = KdTree(pts, leaf_size=4).query_knn(queries, k)
    for q, row in zip(queries, idx):
        expect, _ = brute_knn(pts, q, k)
        assert row[: expect.size].tolist() == expect.tolist()


def test_fps_square_corners():
    pts = np.array([[0, 0, 0], [0, 1, 0], [1, 0, 0], [1, 1, 0]], dtype=float)
    assert farthest_point_sampling(pts, 2, 0).tolist() == [0, 3]


def test_fps_full_is_permutation():
    pts = np.random.default_rng(9).random((40, 3))
    assert sorted(farthest_point_sampling(pts, 40).tolist()) == list(range(40))


def test_fps_rejects_bad_m():
    with pytest.raises(ValueError):
        farthest_point_sampling(np.zeros((3, 3)), 4)


def test_fps_matches_brute_max_min():
    pts = np.random.default_rng(10).random((100, 3))
    got = farthest_point_sampling(pts, 10, 0)
    d = brute_dists(pts, pts)
    chosen = [0]
    for _ in range(9):
        score = d[:, chosen].min(axis=1)
        score[chosen] = -1
        chosen.append(int(np.argmax(score)))
    assert got.tolist() == chosen


@settings(max_examples=30, deadline=None)
@given(pts=arrays(np.float64, st.tuples(st.integers(10, 60), st.just(3)),
                  elements=st.floats(-5, 5, allow_nan=False, width=32)),
       start=st.integers(0, 9))
def test_fps_prefix_consistent(pts, start):
    assert np.array_equal(farthest_point_sampling(pts, 10, start)[:5],
                          farthest_point_sampling(pts, 5, start))
