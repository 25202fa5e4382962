"""Contextual cluster weights: kNN, LSA (bandwidth) and CART neighborhoods.

A cluster is a set of historical indices sharing weight ``1/k``. kNN and LSA
queries run on an exact k-d tree over the scaled joint ``(z1, x)``
coordinates; CART routes the query to a leaf of a tree fitted on the data.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .dataset import HistoricalDataset
from .errors import EmptyCluster


class WeightKind(str, Enum):
    KNN = "knn"
    LSA = "lsa"
    CART = "cart"


@dataclass(frozen=True)
class WeightSpec:
    """Neighborhood rule and its size parameter.

    Give either the fixed size (``k``, ``h`` or ``min_leaf``) or a rate pair
    ``(C, delta)``: kNN ``k = ceil(C N^delta)``, LSA ``h = C N^-delta``,
    CART ``min_leaf = min(ceil(C N^delta), N - 1)``.
    """

    kind: WeightKind
    k: int | None = None
    h: float | None = None
    min_leaf: int | None = None
    C: float | None = None
    delta: float | None = None
    honest: bool = False
    random_split: bool = False
    split_seed: int = 0
    scaling: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", WeightKind(self.kind))
        if self.scaling is not None:
            sc = tuple(float(v) for v in self.scaling)
            if any(not v > 0 for v in sc):
                raise ValueError("scaling entries must be positive")
            object.__setattr__(self, "scaling", sc)
        fixed = {WeightKind.KNN: self.k, WeightKind.LSA: self.h, WeightKind.CART: self.min_leaf}[self.kind]
        if fixed is None and (self.C is None or self.delta is None):
            raise ValueError(f"{self.kind.value}: give a fixed size or a (C, delta) rate")
        if fixed is None:
            if self.kind == WeightKind.KNN and not (0 < self.C < 1 and 0.5 < self.delta < 1):
                raise ValueError("kNN rate needs C in (0,1) and delta in (0.5,1)")
            if self.kind == WeightKind.LSA and not (self.C > 0 and self.delta > 0):
                raise ValueError("LSA rate needs C > 0 and delta > 0")
            if self.kind == WeightKind.CART and not (self.C > 0 and self.delta > 0):
                raise ValueError("CART rate needs C > 0 and delta > 0")

    def resolve(self, n: int):
        """Size parameter for a dataset of ``n`` samples."""
        if self.kind == WeightKind.KNN:
            return self.k if self.k is not None else math.ceil(self.C * n**self.delta)
        if self.kind == WeightKind.LSA:
            return self.h if self.h is not None else self.C * n ** (-self.delta)
        m = self.min_leaf if self.min_leaf is not None else math.ceil(self.C * n**self.delta)
        return max(1, min(m, n - 1)) if n > 1 else 1

    @classmethod
    def from_dict(cls, d: dict) -> "WeightSpec":
        d = dict(d)
        if d.get("scaling") is not None:
            d["scaling"] = tuple(d["scaling"])
        return cls(**d)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["kind"] = self.kind.value
        if self.scaling is not None:
            out["scaling"] = list(self.scaling)
        return out


@dataclass(frozen=True)
class Cluster:
    members: np.ndarray

    def __post_init__(self):
        m = np.unique(np.asarray(self.members, dtype=np.int64))
        if m.size == 0:
            raise EmptyCluster("cluster must contain at least one index")
        m.setflags(write=False)
        object.__setattr__(self, "members", m)

    @property
    def k(self) -> int:
        return int(self.members.size)

    def weights(self, n: int) -> np.ndarray:
        w = np.zeros(n)
        w[self.members] = 1.0 / self.k
        return w

    def __eq__(self, other):
        return isinstance(other, Cluster) and np.array_equal(self.members, other.members)

    __hash__ = None


def _scale_vector(scaling, dim):
    if scaling is None:
        return np.ones(dim)
    sc = np.asarray(scaling, dtype=float)
    if sc.shape != (dim,):
        raise ValueError(f"scaling has length {sc.size}, points have dimension {dim}")
    return sc


def query_point(z1, x) -> np.ndarray:
    return np.concatenate([np.atleast_1d(np.asarray(z1, dtype=float)), np.atleast_1d(np.asarray(x, dtype=float))])


def scaled_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Euclidean distances of already-scaled rows to an already-scaled query."""
    diff = points - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


class KdIndex:
    """Exact k-d tree over scaled ``(z1, x)``.

    The tree only narrows the candidate set; membership is decided on
    distances recomputed with :func:`scaled_distances`, so results coincide
    with a brute-force scan bit for bit.
    """

    def __init__(self, dataset: HistoricalDataset, scaling=None):
        pts = dataset.points()
        self.scale = _scale_vector(scaling, pts.shape[1])
        self.points = pts * self.scale
        self.points.setflags(write=False)
        self.n = len(pts)
        self._sqnorm = np.einsum("ij,ij->i", self.points, self.points)
        self._kd = None

    @property
    def _tree(self) -> cKDTree:
        # built on first single-point query; batch queries never need it
        if self._kd is None:
            self._kd = cKDTree(self.points, balanced_tree=True, compact_nodes=True)
        return self._kd

    def _q(self, z1, x):
        return query_point(z1, x) * self.scale

    def knn(self, z1, x, k: int) -> np.ndarray:
        if not 1 <= k <= self.n:
            raise ValueError(f"k={k} outside [1, {self.n}]")
        q = self._q(z1, x)
        dk, _ = self._tree.query(q, k=[k])
        r = float(dk[0])
        # widen slightly so ties at the k-th distance all come back
        cand = np.asarray(self._tree.query_ball_point(q, r * (1 + 1e-9) + 1e-12), dtype=np.int64)
        dist = scaled_distances(self.points[cand], q)
        order = np.lexsort((cand, dist))
        return np.sort(cand[order[:k]])

    def _approx_sq(self, qs: np.ndarray) -> np.ndarray:
        # expanded-square distances: fast but only accurate to rounding, so
        # callers use them as a filter and recompute exact distances after
        d2 = self._sqnorm[None, :] + np.einsum("ij,ij->i", qs, qs)[:, None] - 2.0 * (qs @ self.points.T)
        return np.maximum(d2, 0.0)

    def _slack(self, qs: np.ndarray) -> np.ndarray:
        mag = self._sqnorm.max() + np.einsum("ij,ij->i", qs, qs)
        return 1e-9 * mag + 1e-12

    def knn_batch(self, queries: np.ndarray, k: int) -> list:
        """``knn`` for many unscaled joint query points at once."""
        if not 1 <= k <= self.n:
            raise ValueError(f"k={k} outside [1, {self.n}]")
        qs = np.atleast_2d(np.asarray(queries, dtype=float)) * self.scale
        out = []
        for lo in range(0, len(qs), 64):
            block = qs[lo: lo + 64]
            d2 = self._approx_sq(block)
            kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
            keep = d2 <= (kth + 2 * self._slack(block))[:, None]
            for q, row in zip(block, keep):
                cand = np.flatnonzero(row)
                dist = scaled_distances(self.points[cand], q)
                out.append(np.sort(cand[np.lexsort((cand, dist))[:k]]))
        return out

    def radius_batch(self, queries: np.ndarray, h: float) -> list:
        qs = np.atleast_2d(np.asarray(queries, dtype=float)) * self.scale
        out = []
        for lo in range(0, len(qs), 64):
            block = qs[lo: lo + 64]
            keep = self._approx_sq(block) <= (h * h + 2 * self._slack(block))[:, None]
            for q, row in zip(block, keep):
                cand = np.flatnonzero(row)
                if cand.size:
                    cand = cand[scaled_distances(self.points[cand], q) <= h]
                out.append(cand)
        return out

    def radius(self, z1, x, h: float) -> np.ndarray:
        q = self._q(z1, x)
        cand = np.asarray(self._tree.query_ball_point(q, h * (1 + 1e-9) + 1e-12), dtype=np.int64)
        if cand.size == 0:
            return cand
        dist = scaled_distances(self.points[cand], q)
        return np.sort(cand[dist <= h])


def build_index(dataset: HistoricalDataset, scaling=None) -> KdIndex:
    return KdIndex(dataset, scaling)


def knn_cluster(index: KdIndex, z1, x, k: int) -> Cluster:
    return Cluster(index.knn(z1, x, k))


def lsa_cluster(index: KdIndex, z1, x, h: float) -> Cluster:
    if not h > 0:
        raise ValueError("bandwidth h must be positive")
    m = index.radius(z1, x, h)
    if m.size == 0:
        raise EmptyCluster(f"no historical point within h={h:g}")
    return Cluster(m)


# --------------------------------------------------------------------------
# CART

@dataclass
class CartTree:
    """Axis-aligned regression tree. Node ``i`` is a leaf iff ``feature[i] < 0``."""

    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    leaf_members: dict = field(default_factory=dict)
    min_leaf: int = 1
    n_train: int = 0

    def leaf_of(self, point: np.ndarray) -> int:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if point[self.feature[node]] <= self.threshold[node] else self.right[node]
        return node

    def leaves(self):
        return [i for i, f in enumerate(self.feature) if f < 0]


def _best_split(pts, y, est_pts, dims, min_leaf, honest):
    """Best SSE split over ``dims``; returns (sse, dim, threshold) or None."""
    best = None
    n = len(y)
    for j in dims:
        order = np.argsort(pts[:, j], kind="stable")
        v = pts[order, j]
        ys = y[order]
        cs, cs2 = np.cumsum(ys), np.cumsum(ys * ys)
        pos = np.nonzero(v[1:] > v[:-1])[0]  # split after position pos
        if pos.size == 0:
            continue
        thr = 0.5 * (v[pos] + v[pos + 1])
        thr = np.where(thr >= v[pos + 1], v[pos], thr)
        nl = pos + 1
        if honest:
            ev = np.sort(est_pts[:, j])
            el = np.searchsorted(ev, thr, side="right")
            ok = (el >= min_leaf) & (len(ev) - el >= min_leaf)
        else:
            ok = (nl >= min_leaf) & (n - nl >= min_leaf)
        if not ok.any():
            continue
        pos, thr, nl = pos[ok], thr[ok], nl[ok]
        sl, sl2 = cs[pos], cs2[pos]
        sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
        nr = n - nl
        sse = (sl2 - sl * sl / nl) + (sr2 - sr * sr / nr)
        i = int(np.argmin(sse))
        if best is None or sse[i] < best[0]:
            best = (float(sse[i]), int(j), float(thr[i]))
    return best


def train_cart(dataset: HistoricalDataset, spec: WeightSpec) -> CartTree:
    """Fit a regression tree of ``y`` on ``(z1, x)`` with a minimum leaf size.

    Greedy mode picks the SSE-best split over all dimensions and stops when no
    split lowers SSE. Random-split mode draws the dimension uniformly and keeps
    splitting while any legal split exists. Honest mode grows the structure on
    one random half and fills leaves (and checks leaf sizes) with the other.
    """
    X = dataset.points()
    y = np.asarray(dataset.y)
    n = dataset.n
    min_leaf = spec.resolve(n)
    rng = np.random.default_rng(spec.split_seed)
    if spec.honest and n >= 2:
        perm = rng.permutation(n)
        struct_idx, est_idx = np.sort(perm[: n // 2]), np.sort(perm[n // 2:])
    else:
        struct_idx, est_idx = np.arange(n), np.arange(n)
    tree = CartTree(min_leaf=min_leaf, n_train=n)
    d = X.shape[1]

    def new_node():
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        return len(tree.feature) - 1

    stack = [(new_node(), struct_idx, est_idx)]
    while stack:
        node, s_idx, e_idx = stack.pop()
        split = None
        if len(s_idx) >= 2:
            pts, ys, ept = X[s_idx], y[s_idx], X[e_idx]
            if spec.random_split:
                for j in rng.permutation(d):
                    split = _best_split(pts, ys, ept, [j], min_leaf, spec.honest)
                    if split is not None:
                        break
            else:
                split = _best_split(pts, ys, ept, range(d), min_leaf, spec.honest)
                parent = float(((ys - ys.mean()) ** 2).sum())
                if split is not None and not split[0] < parent * (1 - 1e-12):
                    split = None
        if split is None:
            tree.leaf_members[node] = np.sort(e_idx)
            continue
        _, j, thr = split
        tree.feature[node], tree.threshold[node] = j, thr
        l, r = new_node(), new_node()
        tree.left[node], tree.right[node] = l, r
        s_go = X[s_idx, j] <= thr
        e_go = X[e_idx, j] <= thr
        stack.append((r, s_idx[~s_go], e_idx[~e_go]))
        stack.append((l, s_idx[s_go], e_idx[e_go]))
    return tree


def cart_cluster(tree: CartTree, z1, x) -> Cluster:
    return Cluster(tree.leaf_members[tree.leaf_of(query_point(z1, x))])


# --------------------------------------------------------------------------
# whole-grid precomputation

@dataclass(frozen=True)
class ClusterTable:
    x: np.ndarray
    candidates: np.ndarray
    clusters: tuple

    def __len__(self):
        return len(self.clusters)

    def __getitem__(self, t) -> Cluster:
        return self.clusters[t]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["candidate_index", "member_index"])
            for t, cl in enumerate(self.clusters):
                for i in cl.members:
                    w.writerow([t, int(i)])


def single_cluster(dataset, spec: WeightSpec, z1, x, index=None, tree=None) -> Cluster:
    if spec.kind == WeightKind.CART:
        tree = tree or train_cart(dataset, spec)
        return cart_cluster(tree, z1, x)
    index = index or build_index(dataset, spec.scaling)
    size = spec.resolve(dataset.n)
    if spec.kind == WeightKind.KNN:
        return knn_cluster(index, z1, x, size)
    return lsa_cluster(index, z1, x, size)


def precompute_clusters(dataset, candidates, x, spec: WeightSpec, index=None, tree=None) -> ClusterTable:
    """One cluster per candidate ``z1`` at a fixed context, sharing one index or tree."""
    cands = np.asarray(candidates, dtype=float)
    if cands.ndim == 1:
        cands = cands[:, None]
    if len(cands) == 0:
        raise ValueError("candidates is empty")
    queries = np.hstack([cands, np.broadcast_to(np.asarray(x, dtype=float), (len(cands), np.size(x)))])
    if spec.kind == WeightKind.CART:
        tree = tree or train_cart(dataset, spec)
        out = [Cluster(tree.leaf_members[tree.leaf_of(q)]) for q in queries]
    else:
        index = index or build_index(dataset, spec.scaling)
        size = spec.resolve(dataset.n)
        if spec.kind == WeightKind.KNN:
            members = index.knn_batch(queries, size)
        else:
            if not size > 0:
                raise ValueError("bandwidth h must be positive")
            members = index.radius_batch(queries, size)
        out = []
        for t, m in enumerate(members):
            if m.size == 0:
                raise EmptyCluster(f"no historical point within h={size:g}", candidate=t)
            out.append(Cluster(m))
    return ClusterTable(np.asarray(x, dtype=float), cands, tuple(out))
