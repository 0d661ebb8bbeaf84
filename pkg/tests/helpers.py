"""Independent oracles shared by the test modules."""
from __future__ import annotations

import numpy as np

from radar_denoise.autograd import Tensor


def brute_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs Euclidean distances, shape (len(a), len(b))."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def brute_radius(points, query, tau):
    d = brute_dists(np.atleast_2d(query), points)[0]
    return set(np.flatnonzero(d < tau).tolist())


def brute_knn(points, query, k):
    """Rank by squared distance: two squared distances one ulp apart may share a sqrt."""
    sq = ((points - np.asarray(query)) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(sq.size), sq))
    return order[:k], np.sqrt(sq[order[:k]])


def rel_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    n = np.asarray(n, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(f, t: Tensor, entries=None, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``t.data`` at the flat ``entries``."""
    flat = t.data.reshape(-1)
    entries = range(flat.size) if entries is None else entries
    out = []
    for i in entries:
        old = flat[i]
        flat[i] = old + h
        fp = float(f())
        flat[i] = old - h
        fm = float(f())
        flat[i] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def grad_check(build_loss, tensors, h: float = 1e-5, max_entries: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central differences over ``tensors``.

    ``build_loss()`` must construct the graph from scratch and return a scalar Tensor.
    With ``max_entries`` only that many randomly chosen entries per tensor are checked.
    """
    from radar_denoise.autograd import backward

    for t in tensors:
        t.grad = None
    backward(build_loss())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        if max_entries is not None and t.size > max_entries:
            entries = np.sort(rng.choice(t.size, max_entries, replace=False))
        else:
            entries = np.arange(t.size)
        num = numeric_grad(lambda: build_loss().data, t, entries, h)
        worst = max(worst, rel_error(g.reshape(-1)[entries], num))
    return worst


def dense_conv3d_at(coords: np.ndarray, feats: np.ndarray, weight: np.ndarray, shape) -> np.ndarray:
    """Dense zero-padded 3D correlation evaluated at ``coords``.

    ``weight`` is (k, k, k, c_in, c_out); inactive sites hold zero features.
    """
    k = weight.shape[0]
    r = k // 2
    grid = np.zeros(tuple(shape) + (feats.shape[1],))
    grid[coords[:, 0], coords[:, 1], coords[:, 2]] = feats
    padded = np.pad(grid, ((r, r), (r, r), (r, r), (0, 0)))
    out = np.zeros(tuple(shape) + (weight.shape[-1],))
    sx, sy, sz = shape
    for a in range(k):
        for b in range(k):
            for c in range(k):
                out += padded[a:a + sx, b:b + sy, c:c + sz] @ weight[a, b, c]
    return out[coords[:, 0], coords[:, 1], coords[:, 2]]


def dense_conv2d(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    k = weight.shape[0]
    r = k // 2
    w, h, _ = x.shape
    padded = np.pad(x, ((r, r), (r, r), (0, 0)))
    out = np.zeros((w, h, weight.shape[-1]))
    for i in range(w):
        for j in range(h):
            patch = padded[i:i + k, j:j + k]
            out[i, j] = np.einsum("abc,abcd->d", patch, weight)
    return out
