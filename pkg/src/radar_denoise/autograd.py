"""Small reverse-mode autodiff engine over float64 numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  :func:`backward`
walks the graph in reverse topological order.  Gradients of intermediate
nodes live only for the duration of one backward call; leaf tensors that
require grad accumulate into ``.grad`` across calls until zeroed.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import zlib
from pathlib import Path

import numpy as np
from scipy import sparse

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data, parents, backward) -> Tensor:
    """Wrap an op result; records the graph only when some parent needs grad."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from the scalar ``loss``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    topo, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data * b.data, (a, b),
                lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make(s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a: Tensor) -> Tensor:
    return make(np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return make(e, (a,), lambda g: (g * e,))


# -- reductions and shape ops --------------------------------------------------

def tsum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return make(out, (a,), bw)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return make(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


def reshape(a: Tensor, shape) -> Tensor:
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                lambda g: tuple(np.split(g, cuts, axis=axis)))


def take(a: Tensor, idx) -> Tensor:
    """Row gather ``a[idx]`` for an integer index array of any shape."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        flat = g.reshape(idx.size, -1)
        if a.ndim == 1:
            return (np.bincount(idx.ravel(), weights=flat.ravel(), minlength=a.shape[0]),)
        # scatter-add as a sparse (rows x gathered) 0/1 matrix product
        scatter = sparse.csr_matrix((np.ones(idx.size), (idx.ravel(), np.arange(idx.size))),
                                    shape=(a.shape[0], idx.size))
        return (np.asarray(scatter @ flat).reshape(a.shape),)

    return make(a.data[idx], (a,), bw)


def max_axis(a: Tensor, axis: int) -> Tensor:
    """Max over ``axis``; the gradient goes to the first maximal entry."""
    arg = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return make(out, (a,), bw)


def segment_max(a: Tensor, segment: np.ndarray, num_segments: int) -> Tensor:
    """Column-wise max of the rows of ``a`` sharing a segment id; empty segments are 0."""
    segment = np.asarray(segment, dtype=np.int64)
    n, c = a.shape
    out = np.zeros((num_segments, c))
    if n == 0:
        return make(out, (a,), lambda g: (np.zeros_like(a.data),))
    order = np.argsort(segment, kind="stable")
    seg_sorted = segment[order]
    starts = np.flatnonzero(np.r_[True, seg_sorted[1:] != seg_sorted[:-1]])
    seg_ids = seg_sorted[starts]
    vals = a.data[order]
    maxes = np.maximum.reduceat(vals, starts, axis=0)
    out[seg_ids] = maxes
    # first row (in sorted order) attaining the max, per segment and channel
    run = np.repeat(np.arange(starts.size), np.diff(np.r_[starts, n]))
    hit = vals == maxes[run]
    hit |= np.isnan(vals) & np.isnan(maxes[run])  # NaN max: route to the first NaN row
    pos = np.where(hit, np.arange(n)[:, None], n)
    first = np.minimum.reduceat(pos, starts, axis=0)
    src_rows = order[first]

    def bw(g):
        full = np.zeros_like(a.data)
        cols = np.broadcast_to(np.arange(c), src_rows.shape)
        full[src_rows, cols] = g[seg_ids]
        return (full,)

    return make(out, (a,), bw)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# -- parameters and optimiser ---------------------------------------------------

def _name_seed(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


class ParamStore:
    """Named trainable tensors, non-trainable buffers and Adam state.

    Parameters are created on first request, each from an RNG stream derived
    from ``(seed, name)``, so initial values do not depend on creation order.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self.frozen = False

    def get(self, name: str, shape, init="he", fan_in: int | None = None) -> Tensor:
        p = self.params.get(name)
        if p is not None:
            if p.shape != tuple(shape):
                raise ValueError(f"parameter {name} has shape {p.shape}, requested {tuple(shape)}")
            return p
        if self.frozen:
            raise KeyError(f"unknown parameter {name}")
        shape = tuple(shape)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init in ("he", "xavier"):
            fan = fan_in if fan_in is not None else (shape[0] if shape else 1)
            gain = 2.0 if init == "he" else 1.0
            data = _name_seed(self.seed, name).normal(0.0, np.sqrt(gain / max(fan, 1)), size=shape)
        else:
            data = np.asarray(init(shape, _name_seed(self.seed, name)), dtype=np.float64)
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def buffer(self, name: str, init) -> np.ndarray:
        if name not in self.buffers:
            if self.frozen:
                raise KeyError(f"unknown buffer {name}")
            self.buffers[name] = np.array(init, dtype=np.float64)
        return self.buffers[name]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> dict:
        def pack(arrs):
            return {k: {"shape": list(a.shape), "values": a.ravel().tolist()} for k, a in sorted(arrs.items())}

        return {
            "seed": self.seed,
            "params": pack({k: p.data for k, p in self.params.items()}),
            "buffers": pack(self.buffers),
            "optimizer": {"name": "adam", "step": self.step, "m": pack(self.m), "v": pack(self.v)},
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "ParamStore":
        def unpack(d):
            return {k: np.array(e["values"], dtype=np.float64).reshape(e["shape"]) for k, e in d.items()}

        store = cls(seed=state.get("seed", 0))
        for k, a in unpack(state["params"]).items():
            store.params[k] = Tensor(a, requires_grad=True, name=k)
        store.buffers = unpack(state.get("buffers", {}))
        opt = state.get("optimizer", {})
        store.step = int(opt.get("step", 0))
        store.m = unpack(opt.get("m", {}))
        store.v = unpack(opt.get("v", {}))
        return store


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update. Gradients are left in place."""
    missing = [k for k, p in store.params.items() if p.grad is None]
    if missing:
        raise RuntimeError(f"adam_step: no gradient for {', '.join(sorted(missing)[:5])}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in store.params.items():
        g = p.grad
        m = store.m.get(k)
        if m is None:
            m = store.m[k] = np.zeros_like(p.data)
            store.v[k] = np.zeros_like(p.data)
        v = store.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path, store: ParamStore, config: dict, extra: dict | None = None) -> None:
    doc = {"config": config, "config_hash": config_hash(config), **store.state_dict()}
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Return ``(store, config, doc)``; refuses documents whose config hash is stale."""
    doc = json.loads(Path(path).read_text())
    config = doc.get("config", {})
    if doc.get("config_hash") != config_hash(config):
        raise ValueError(f"{path}: config hash mismatch, checkpoint was altered or is corrupt")
    store = ParamStore.from_state_dict(doc)
    store.frozen = True
    return store, config, doc
