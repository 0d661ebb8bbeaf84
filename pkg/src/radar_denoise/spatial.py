"""KD-tree, radius / k-nearest-neighbour search and farthest point sampling.

The tree splits on axis ``depth % 3`` at the median point (ties resolved by
lower point index).  Subtrees holding ``leaf_size`` points or fewer become
bucket leaves.  All queries are batched: a set of query points descends the
tree together and is split at every node, so the Python-level work is per
visited node rather than per query.

Radius searches use a strict inequality, ``dist < tau``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NeighborSet:
    indices: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return self.indices.size


def _as_positions(positions) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.float64)
    if pos.size == 0:
        return np.zeros((0, 3))
    pos = pos.reshape(-1, pos.shape[-1])
    if pos.shape[1] < 3:
        raise ValueError("positions need 3 coordinates")
    pos = pos[:, :3]
    if not np.all(np.isfinite(pos)):
        raise ValueError("positions must be finite")
    return pos


def sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance along the last axis (broadcasting)."""
    d = a - b
    return (d * d).sum(-1)


class KdTree:
    """Static KD-tree over 3D positions. Immutable after construction."""

    def __init__(self, positions, leaf_size: int = 32):
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        self.positions = _as_positions(positions)
        self.positions.setflags(write=False)
        self.leaf_size = leaf_size
        self._build()

    def __len__(self) -> int:
        return self.positions.shape[0]

    def _build(self):
        pos = self.positions
        axis, split, point, left, right, lo, hi = [], [], [], [], [], [], []
        order = []
        n = pos.shape[0]
        if n:
            # (node id, point indices, depth); children are patched in after creation
            stack = [(self._new_node(axis, split, point, left, right, lo, hi), np.arange(n), 0)]
            while stack:
                node, idx, depth = stack.pop()
                if idx.size <= self.leaf_size:
                    lo[node] = len(order)
                    order.extend(idx.tolist())
                    hi[node] = len(order)
                    continue
                ax = depth % 3
                srt = idx[np.lexsort((idx, pos[idx, ax]))]
                m = srt.size // 2
                p = int(srt[m])
                axis[node] = ax
                split[node] = pos[p, ax]
                point[node] = p
                lchild = self._new_node(axis, split, point, left, right, lo, hi)
                left[node] = lchild
                rchild = -1
                if srt.size > m + 1:
                    rchild = self._new_node(axis, split, point, left, right, lo, hi)
                    right[node] = rchild
                    stack.append((rchild, srt[m + 1:], depth + 1))
                stack.append((lchild, srt[:m], depth + 1))
        self.axis = np.array(axis, dtype=np.int64)
        self.split = np.array(split, dtype=np.float64)
        self.point = np.array(point, dtype=np.int64)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.lo = np.array(lo, dtype=np.int64)
        self.hi = np.array(hi, dtype=np.int64)
        self.order = np.array(order, dtype=np.int64)

    @staticmethod
    def _new_node(axis, split, point, left, right, lo, hi) -> int:
        axis.append(-1)
        split.append(0.0)
        point.append(-1)
        left.append(-1)
        right.append(-1)
        lo.append(0)
        hi.append(0)
        return len(axis) - 1

    @property
    def num_nodes(self) -> int:
        return self.axis.size

    def is_leaf(self, node: int) -> bool:
        return self.point[node] < 0

    # -- radius search ----------------------------------------------------

    def _radius_walk(self, queries: np.ndarray, tau: float, exists_only: bool):
        pos = self.positions
        found = np.zeros(queries.shape[0], dtype=bool)
        hits_q, hits_p, hits_d = [], [], []
        if self.num_nodes == 0 or queries.shape[0] == 0:
            return found, hits_q, hits_p, hits_d
        stack = [(0, np.arange(queries.shape[0]))]
        while stack:
            node, qi = stack.pop()
            if exists_only:
                qi = qi[~found[qi]]
            if qi.size == 0:
                continue
            p = self.point[node]
            if p < 0:
                pts = self.order[self.lo[node]:self.hi[node]]
                d = np.sqrt(sq_dist(queries[qi, None, :], pos[None, pts, :]))
                qq, pp = np.nonzero(d < tau)
                if qq.size:
                    found[qi[qq]] = True
                    if not exists_only:
                        hits_q.append(qi[qq])
                        hits_p.append(pts[pp])
                        hits_d.append(d[qq, pp])
                continue
            d = np.sqrt(sq_dist(queries[qi], pos[p]))
            inside = d < tau
            if inside.any():
                found[qi[inside]] = True
                if not exists_only:
                    hits_q.append(qi[inside])
                    hits_p.append(np.full(int(inside.sum()), p))
                    hits_d.append(d[inside])
            diff = queries[qi, self.axis[node]] - self.split[node]
            # the far side can only hold points at distance >= gap
            near_enough = np.sqrt(diff * diff) < tau
            lchild, rchild = self.left[node], self.right[node]
            if rchild >= 0:
                stack.append((rchild, qi[(diff >= 0) | near_enough]))
            if lchild >= 0:
                stack.append((lchild, qi[(diff < 0) | near_enough]))
        return found, hits_q, hits_p, hits_d

    def query_radius(self, queries, tau: float) -> list:
        """All indexed points with distance strictly below ``tau``, per query."""
        if not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        queries = _as_positions(queries)
        _, hq, hp, hd = self._radius_walk(queries, tau, exists_only=False)
        m = queries.shape[0]
        if not hq:
            empty = NeighborSet(np.zeros(0, dtype=np.int64), np.zeros(0))
            return [empty] * m
        q = np.concatenate(hq)
        p = np.concatenate(hp)
        d = np.concatenate(hd)
        srt = np.lexsort((p, d, q))
        q, p, d = q[srt], p[srt], d[srt]
        bounds = np.searchsorted(q, np.arange(m + 1))
        return [NeighborSet(p[bounds[i]:bounds[i + 1]], d[bounds[i]:bounds[i + 1]]) for i in range(m)]

    def count_radius(self, queries, tau: float) -> np.ndarray:
        """Number of indexed points strictly within ``tau`` of each query."""
        if not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        queries = _as_positions(queries)
        _, hq, _, _ = self._radius_walk(queries, tau, exists_only=False)
        counts = np.zeros(queries.shape[0], dtype=np.int64)
        if hq:
            counts += np.bincount(np.concatenate(hq), minlength=queries.shape[0])
        return counts

    def any_within(self, queries, tau: float) -> np.ndarray:
        """Existence-only radius query; each query stops at its first hit."""
        if not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        queries = _as_positions(queries)
        found, _, _, _ = self._radius_walk(queries, tau, exists_only=True)
        return found

    # -- k nearest neighbours ---------------------------------------------

    def query_knn(self, queries, k: int):
        """Return ``(indices, distances)`` arrays of shape (M, min(k, N)).

        Rows are sorted by distance; equal distances are ordered by index.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if len(self) == 0:
            raise ValueError("knn on an empty point set")
        queries = _as_positions(queries)
        pos = self.positions
        m = queries.shape[0]
        k = min(k, len(self))
        best_d = np.full((m, k), np.inf)
        best_i = np.full((m, k), np.iinfo(np.int64).max, dtype=np.int64)

        def offer(qi, cand_i, cand_d):
            useful = cand_d <= best_d[qi, -1:]
            rows = useful.any(axis=1)
            if not rows.any():
                return
            qi, cand_i, cand_d = qi[rows], cand_i[rows], cand_d[rows]
            cand_d = np.where(useful[rows], cand_d, np.inf)
            d = np.concatenate([best_d[qi], cand_d], axis=1)
            i = np.concatenate([best_i[qi], cand_i], axis=1)
            srt = np.lexsort((i, d), axis=-1)[:, :k]
            best_d[qi] = np.take_along_axis(d, srt, axis=1)
            best_i[qi] = np.take_along_axis(i, srt, axis=1)

        # entries: (node, query indices, squared lower bound per query)
        stack = [(0, np.arange(m), np.zeros(m))]
        while stack:
            node, qi, bound = stack.pop()
            keep = bound <= best_d[qi, -1]
            qi, bound = qi[keep], bound[keep]
            if qi.size == 0:
                continue
            p = self.point[node]
            if p < 0:
                pts = self.order[self.lo[node]:self.hi[node]]
                d = sq_dist(queries[qi, None, :], pos[None, pts, :])
                offer(qi, np.broadcast_to(pts, d.shape), d)
                continue
            offer(qi, np.full((qi.size, 1), p), sq_dist(queries[qi], pos[p])[:, None])
            diff = queries[qi, self.axis[node]] - self.split[node]
            gap = np.maximum(bound, diff * diff)
            go_left = diff < 0
            lchild, rchild = self.left[node], self.right[node]
            # far sides first so the near sides are popped (and tighten bounds) first
            if rchild >= 0 and go_left.any():
                stack.append((rchild, qi[go_left], gap[go_left]))
            if lchild >= 0 and (~go_left).any():
                stack.append((lchild, qi[~go_left], gap[~go_left]))
            if lchild >= 0 and go_left.any():
                stack.append((lchild, qi[go_left], bound[go_left]))
            if rchild >= 0 and (~go_left).any():
                stack.append((rchild, qi[~go_left], bound[~go_left]))
        return best_i, np.sqrt(best_d)


def build_kdtree(positions, leaf_size: int = 32) -> KdTree:
    return KdTree(positions, leaf_size=leaf_size)


def radius_neighbors(tree: KdTree, query, tau: float) -> NeighborSet:
    """Indexed points strictly closer than ``tau`` to ``query``, sorted by distance."""
    query = np.asarray(query, dtype=np.float64).reshape(1, -1)
    if not np.all(np.isfinite(query)):
        raise ValueError("query must be finite")
    return tree.query_radius(query, tau)[0]


def knn(positions, query, k: int) -> NeighborSet:
    """The ``k`` nearest of ``positions`` to ``query`` (all of them if k > N)."""
    tree = positions if isinstance(positions, KdTree) else KdTree(positions)
    idx, dist = tree.query_knn(np.asarray(query, dtype=np.float64).reshape(1, -1), k)
    return NeighborSet(idx[0], dist[0])


def farthest_point_sampling(positions, m: int, start: int = 0) -> np.ndarray:
    """Greedy max-min subset of ``m`` indices beginning at ``start``.

    Each pick maximises the distance to the already selected set; ties go to
    the lower index, so the result is deterministic and prefix-consistent.
    """
    pos = _as_positions(positions)
    n = pos.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= N, got m={m}, N={n}")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    min_d = sq_dist(pos, pos[start])
    min_d[start] = -np.inf
    for t in range(1, m):
        j = int(np.argmax(min_d))
        chosen[t] = j
        np.minimum(min_d, sq_dist(pos, pos[j]), out=min_d)
        min_d[j] = -np.inf
    return chosen
