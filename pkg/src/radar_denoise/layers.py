"""Network layers on top of :mod:`radar_denoise.autograd`.

Layers take a :class:`ParamStore` and a name prefix; parameters are fetched
(or created on first use) from the store under ``<prefix>.<param>``.
"""
from __future__ import annotations

import numpy as np

from .autograd import ParamStore, Tensor, add, make, matmul, relu, reshape, sigmoid

ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "none": lambda t: t}


def linear(store: ParamStore, name: str, x: Tensor, c_out: int, bias: bool = True,
           init="he") -> Tensor:
    c_in = x.shape[1]
    w = store.get(f"{name}.w", (c_in, c_out), init=init, fan_in=c_in)
    y = matmul(x, w)
    if bias:
        y = add(y, store.get(f"{name}.b", (c_out,), init="zeros"))
    return y


def mlp_apply(store: ParamStore, name: str, x: Tensor, widths, activation: str = "relu",
              norm: bool = False, mode: str = "train") -> Tensor:
    """Shared-weight MLP: every row goes through the same affine/activation chain.

    With ``norm=True`` a batch normalisation sits between each affine map and
    its activation.
    """
    if not widths:
        raise ValueError("mlp needs at least one layer")
    if x.ndim != 2:
        raise ValueError(f"mlp input must be 2-D, got shape {x.shape}")
    act = ACTIVATIONS[activation]
    for i, width in enumerate(widths):
        x = linear(store, f"{name}.{i}", x, width, bias=not norm)
        if norm:
            x = batchnorm_apply(store, f"{name}.{i}.bn", x, mode)
        x = act(x)
    return x


def batchnorm_apply(store: ParamStore, name: str, x: Tensor, mode: str = "train",
                    eps: float = 1e-5, momentum: float = 0.9) -> Tensor:
    """Batch normalisation over the row axis.

    Train mode normalises with the (biased) batch statistics and folds them
    into the running averages; eval mode uses the running averages.
    """
    n, c = x.shape
    if n == 0:
        raise ValueError("batchnorm on an empty batch")
    gamma = store.get(f"{name}.gamma", (c,), init="ones")
    beta = store.get(f"{name}.beta", (c,), init="zeros")
    run_mean = store.buffer(f"{name}.running_mean", np.zeros(c))
    run_var = store.buffer(f"{name}.running_var", np.ones(c))
    if mode == "train":
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        run_mean *= momentum
        run_mean += (1.0 - momentum) * mu
        run_var *= momentum
        run_var += (1.0 - momentum) * var
    elif mode == "eval":
        mu, var = run_mean.copy(), run_var.copy()
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def bw(g):
        dxhat = g * gamma.data
        if mode == "train":
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make(out, (x, gamma, beta), bw)


# -- submanifold sparse convolution ---------------------------------------------

def kernel_offsets(k: int) -> np.ndarray:
    """All 3D offsets of a k×k×k kernel in lexicographic order (centre at k**3 // 2)."""
    if k % 2 != 1:
        raise ValueError("kernel size must be odd")
    r = k // 2
    rng = np.arange(-r, r + 1)
    return np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)


def subm_rulebook(coords, k: int) -> np.ndarray:
    """Neighbour table ``nbr[i, o]``: index of the active site at ``coords[i] + offset[o]``.

    Missing neighbours point at row ``N`` (a zero padding row).
    """
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    n = coords.shape[0]
    offsets = kernel_offsets(k)
    if n == 0:
        return np.zeros((0, offsets.shape[0]), dtype=np.int64)
    r = k // 2
    lo = coords.min(axis=0) - r
    dims = coords.max(axis=0) - lo + r + 1

    def key(c):
        c = c - lo
        return (c[..., 0] * dims[1] + c[..., 1]) * dims[2] + c[..., 2]

    keys = key(coords)
    order = np.argsort(keys)
    sorted_keys = keys[order]
    if np.any(sorted_keys[1:] == sorted_keys[:-1]):
        raise ValueError("active coordinates must be unique")
    q = key(coords[:, None, :] + offsets[None, :, :])
    pos = np.minimum(np.searchsorted(sorted_keys, q), n - 1)
    hit = sorted_keys[pos] == q
    return np.where(hit, order[pos], n)


def subm_conv_apply(store: ParamStore, name: str, nbr: np.ndarray, x: Tensor, c_out: int,
                    k: int = 3, bias: bool = True) -> Tensor:
    """Submanifold convolution: outputs only at the input's active sites.

    ``out[i] = b + sum_o W[o]^T x[nbr[i, o]]`` over offsets whose neighbour is
    active; ``nbr`` comes from :func:`subm_rulebook` and is not modified, so
    the active set is unchanged by construction.
    """
    n, c_in = x.shape
    kk = k ** 3
    if nbr.shape != (n, kk):
        raise ValueError(f"rulebook shape {nbr.shape} does not match {n} sites and a {k}^3 kernel")
    weight = store.get(f"{name}.w", (k, k, k, c_in, c_out), init="he", fan_in=kk * c_in)
    w3 = reshape(weight, (kk, c_in, c_out))
    # radar voxels are sparse: gather per kernel offset over the active pairs only
    pairs = []
    for o in range(kk):
        rows = np.flatnonzero(nbr[:, o] < n)
        if rows.size:
            pairs.append((o, rows, nbr[rows, o]))
    out = np.zeros((n, c_out))
    for o, rows, src in pairs:
        out[rows] += x.data[src] @ w3.data[o]

    def bw(g):
        dx = np.zeros((n, c_in))
        dw = np.zeros_like(w3.data)
        for o, rows, src in pairs:
            # rows and src are each duplicate-free for a fixed offset
            dx[src] += g[rows] @ w3.data[o].T
            dw[o] = x.data[src].T @ g[rows]
        return dx, dw

    y = make(out, (x, w3), bw)
    if bias:
        y = add(y, store.get(f"{name}.b", (c_out,), init="zeros"))
    return y


# -- dense 2D convolution on BEV grids ------------------------------------------

def conv2d_apply(store: ParamStore, name: str, x: Tensor, c_out: int, k: int = 3,
                 bias: bool = True, init="he") -> Tensor:
    """Stride-1, zero-padded ('same') convolution of an (W, H, C) grid."""
    if x.ndim != 3:
        raise ValueError(f"conv2d input must be (W, H, C), got {x.shape}")
    if k % 2 != 1:
        raise ValueError("kernel size must be odd")
    wd, ht, c_in = x.shape
    r = k // 2
    weight = store.get(f"{name}.w", (k, k, c_in, c_out), init=init, fan_in=k * k * c_in)
    w2 = reshape(weight, (k * k * c_in, c_out))
    padded = np.pad(x.data, ((r, r), (r, r), (0, 0)))
    cols = np.stack([padded[i:i + wd, j:j + ht] for i in range(k) for j in range(k)], axis=2)
    cols = cols.reshape(wd * ht, k * k * c_in)
    out = (cols @ w2.data).reshape(wd, ht, c_out)

    def bw(g):
        g2 = g.reshape(wd * ht, c_out)
        dcols = (g2 @ w2.data.T).reshape(wd, ht, k * k, c_in)
        dpad = np.zeros_like(padded)
        t = 0
        for i in range(k):
            for j in range(k):
                dpad[i:i + wd, j:j + ht] += dcols[:, :, t]
                t += 1
        return dpad[r:r + wd, r:r + ht], cols.T @ g2

    y = make(out, (x, w2), bw)
    if bias:
        y = add(y, store.get(f"{name}.b", (c_out,), init="zeros"))
    return y
