"""Price-setting newsvendor with a profit-target (VaR) chance constraint.

For a fixed price the approximated VaR constraint is an interval in the
order quantity, the subproblem optimum is a clipped empirical fractile, and
complementary slackness hands back the dual without an LP solve. The
``*_from_demands`` helpers work on a bare demand vector so the residual
baselines can reuse them.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .dataset import HistoricalDataset
from .errors import (
    AllCandidatesInfeasible,
    BalanceViolation,
    DegenerateTarget,
    EmptyCluster,
    EmptyInterval,
)
from .estimator import required_count, violation_budget
from .solver import (
    OPTIMAL,
    BoundCut,
    CandidateGrid,
    CutMode,
    PaperCut,
    SolveReport,
    SubproblemOutcome,
    benders_solve,
    solve_enumeration,
)
from .weights import (
    Cluster,
    WeightKind,
    WeightSpec,
    build_index,
    precompute_clusters,
    query_point,
    scaled_distances,
    train_cart,
    cart_cluster,
)


@dataclass(frozen=True)
class PSNPInstance:
    """Prices are held as integer tenths so candidate identity is exact."""

    price_tenths: tuple = tuple(range(100, 300))
    c: float = 5.0
    s: float = 2.0
    q_bar: float = 1e4
    epsilon_v: float | None = None

    def __post_init__(self):
        t = tuple(int(v) for v in self.price_tenths)
        if not t or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("price grid must be nonempty and strictly increasing")
        object.__setattr__(self, "price_tenths", t)
        if not self.s < self.c < t[0] / 10:
            raise ValueError("need s < c < min price")
        if not self.q_bar > 0:
            raise ValueError("q_bar must be positive")
        if self.epsilon_v is not None and self.epsilon_v < 0:
            raise ValueError("epsilon_v must be nonnegative")

    @classmethod
    def from_prices(cls, prices, **kw):
        return cls(price_tenths=tuple(int(round(p * 10)) for p in prices), **kw)

    @property
    def prices(self) -> np.ndarray:
        return np.array(self.price_tenths, dtype=float) / 10.0

    def nudge(self, v: float) -> float:
        return self.epsilon_v if self.epsilon_v is not None else 1e-7 * abs(v) + 1e-9


@dataclass(frozen=True)
class VarConstraint:
    v: float
    alpha_v: float

    def __post_init__(self):
        if not 0 < self.alpha_v < 1:
            raise ValueError("alpha_v must lie in (0, 1)")


@dataclass(frozen=True)
class SlConstraint:
    alpha_s: float

    def __post_init__(self):
        if not 0 < self.alpha_s < 1:
            raise ValueError("alpha_s must lie in (0, 1)")


@dataclass(frozen=True)
class FeasibleInterval:
    lo: float
    hi: float
    v_effective: float | None = None

    @property
    def empty(self) -> bool:
        return self.lo > self.hi

    def intersect(self, lo=-math.inf, hi=math.inf) -> "FeasibleInterval":
        return FeasibleInterval(max(self.lo, lo), min(self.hi, hi), self.v_effective)

    def contains(self, q):
        return (self.lo <= q) & (q <= self.hi)


@dataclass
class DualSolution:
    members: np.ndarray
    lambda1: np.ndarray
    lambda2: float
    lambda3: float

    def as_dict(self) -> dict:
        return {int(i): float(l) for i, l in zip(self.members, self.lambda1)}


def loss(p, q, d, instance: PSNPInstance):
    """Newsvendor loss: negative margin on the order plus the overage penalty."""
    return -(p - instance.c) * q + (p - instance.s) * np.maximum(q - d, 0.0)


def objective_from_demands(p, q, d, instance) -> float:
    return float(np.mean(loss(p, q, d, instance)))


def _check_price(p, instance):
    if not p > instance.c:
        raise ValueError(f"price {p} must exceed unit cost {instance.c}")


def effective_target(d, p, v, instance) -> float:
    """Shift ``v`` off any scenario with ``(p - c) d == v``."""
    margin = (p - instance.c) * np.asarray(d)
    if not np.any(margin == v):
        return float(v)
    v2 = v + instance.nudge(v)
    if np.any(margin == v2):
        raise DegenerateTarget(f"target {v} still hits a scenario after nudging to {v2}")
    return float(v2)


def var_interval_from_demands(d, p, instance: PSNPInstance, constraint: VarConstraint) -> FeasibleInterval:
    _check_price(p, instance)
    d = np.asarray(d, dtype=float)
    k = d.size
    v = effective_target(d, p, constraint.v, instance)
    thr = v / (p - instance.c)
    qual = d[d > thr]
    need = required_count(k, constraint.alpha_v)
    if need <= qual.size:
        j = qual.size - need
        dv = float(np.partition(qual, j)[j])
    else:
        dv = 0.0  # padded by the zeros of non-qualifying / non-member rows
    hi = ((p - instance.s) * dv - v) / (instance.c - instance.s)
    return FeasibleInterval(max(thr, 0.0), min(hi, instance.q_bar), v)


def var_interval(cluster: Cluster, dataset: HistoricalDataset, p, instance, constraint) -> FeasibleInterval:
    return var_interval_from_demands(dataset.y[cluster.members], p, instance, constraint)


def sl_bound_from_demands(d, constraint: SlConstraint) -> float:
    d = np.sort(np.asarray(d, dtype=float))
    return float(d[d.size - violation_budget(d.size, constraint.alpha_s) - 1])


def sl_lower_bound(cluster: Cluster, dataset: HistoricalDataset, constraint: SlConstraint) -> float:
    """(floor(k alpha_s) + 1)-th largest member demand."""
    return sl_bound_from_demands(dataset.y[cluster.members], constraint)


def feasible_interval_from_demands(d, p, instance, constraints) -> FeasibleInterval:
    """Intersection of every constraint's interval with ``[0, q_bar]``."""
    iv = FeasibleInterval(0.0, instance.q_bar)
    for con in constraints:
        if isinstance(con, VarConstraint):
            var = var_interval_from_demands(d, p, instance, con)
            iv = FeasibleInterval(max(iv.lo, var.lo), min(iv.hi, var.hi), var.v_effective)
        elif isinstance(con, SlConstraint):
            iv = iv.intersect(lo=sl_bound_from_demands(d, con))
        else:
            raise TypeError(f"unsupported constraint {con!r}")
    return iv


def fractile_rank(k: int, p, instance) -> int:
    """n* = min{n : n (p - s) - k (p - c) > 0}."""
    n = math.floor(k * (p - instance.c) / (p - instance.s))
    while n > 1 and (n - 1) * (p - instance.s) - k * (p - instance.c) > 0:
        n -= 1
    while not n * (p - instance.s) - k * (p - instance.c) > 0:
        n += 1
    return n


def optimum_from_demands(d, p, interval: FeasibleInterval, instance):
    if interval.empty:
        raise EmptyInterval(f"[{interval.lo}, {interval.hi}] is empty")
    d = np.asarray(d, dtype=float)
    n = fractile_rank(d.size, p, instance)
    dn = float(np.partition(d, n - 1)[n - 1])
    q = min(max(interval.lo, dn), interval.hi)
    return q, objective_from_demands(p, q, d, instance)


def subproblem_optimum(cluster, dataset, p, interval, instance):
    """Clipped fractile solution of the fixed-price subproblem: (q*, value)."""
    return optimum_from_demands(dataset.y[cluster.members], p, interval, instance)


def breakpoint_search(d, p, interval: FeasibleInterval, instance, chunk: int = 256):
    """Minimise the piecewise-linear objective over ``{lo, hi} U {d_i in [lo, hi]}``."""
    if interval.empty:
        raise EmptyInterval(f"[{interval.lo}, {interval.hi}] is empty")
    d = np.asarray(d, dtype=float)
    cand = np.concatenate([[interval.lo, interval.hi], d[interval.contains(d)]])
    best_q, best_v = None, math.inf
    for i in range(0, cand.size, chunk):
        qs = cand[i: i + chunk]
        vals = loss(p, qs[:, None], d[None, :], instance).mean(axis=1)
        j = int(np.argmin(vals))
        if vals[j] < best_v or (vals[j] == best_v and qs[j] < best_q):
            best_q, best_v = float(qs[j]), float(vals[j])
    return best_q, best_v


def breakpoint_scan(d, p, interval: FeasibleInterval, instance, chunk: int = 256):
    """Joint-model search: every member demand plus the interval ends is a
    candidate, feasibility is checked per point. ``(None, inf)`` if none is feasible."""
    d = np.asarray(d, dtype=float)
    cand = np.concatenate([[interval.lo, interval.hi], d])
    best_q, best_v = None, math.inf
    for i in range(0, cand.size, chunk):
        qs = cand[i: i + chunk]
        vals = loss(p, qs[:, None], d[None, :], instance).mean(axis=1)
        vals = np.where((qs >= interval.lo) & (qs <= interval.hi), vals, np.inf)
        j = int(np.argmin(vals))
        if vals[j] < best_v or (best_q is not None and vals[j] == best_v and qs[j] < best_q):
            best_q, best_v = float(qs[j]), float(vals[j])
    return best_q, best_v


def duals_from_demands(q_star, d, p, interval: FeasibleInterval, instance, members=None, tie_tol=0.0) -> DualSolution:
    d = np.asarray(d, dtype=float)
    k = d.size
    members = np.arange(k) if members is None else np.asarray(members)
    cap = (p - instance.s) / k
    rhs = p - instance.c
    below = d < q_star - tie_tol
    tied = ~below & (d <= q_star + tie_tol)
    lam1 = np.where(below, cap, 0.0)
    at_lo = abs(q_star - interval.lo) <= tie_tol
    at_hi = abs(q_star - interval.hi) <= tie_tol
    residual = rhs - lam1.sum()
    lam2 = lam3 = 0.0
    slack = 1e-12 * max(1.0, rhs)
    if -slack < residual < 0:
        residual = 0.0
    if residual < 0:
        if not at_lo:
            raise BalanceViolation(f"q*={q_star} is not at the lower bound but the ordering slope is positive")
        lam2 = -residual
    else:
        for i in np.nonzero(tied)[0]:  # lowest index first
            take = min(cap, residual)
            lam1[i] = take
            residual -= take
            if residual <= 0:
                break
        if residual > slack:
            if not at_hi:
                raise BalanceViolation(f"q*={q_star} is not at the upper bound but the ordering slope is negative")
            lam3 = residual
    return DualSolution(members, lam1, float(lam2), float(lam3))


def recover_duals(q_star, cluster, dataset, p, interval, instance, tie_tol=0.0) -> DualSolution:
    """Optimal dual of the fixed-price LP from complementary slackness."""
    return duals_from_demands(q_star, dataset.y[cluster.members], p, interval, instance, cluster.members, tie_tol)


def dual_objective(duals: DualSolution, d, interval: FeasibleInterval) -> float:
    return float(-np.dot(duals.lambda1, d) + duals.lambda2 * interval.lo - duals.lambda3 * interval.hi)


def paper_cut(duals: DualSolution, cluster, dataset, source: int = -1) -> PaperCut:
    d = dataset.y[duals.members]
    return PaperCut(float(-np.dot(duals.lambda1, d)), duals.lambda2, duals.lambda3, source)


def dual_bound(d, p, interval: FeasibleInterval, instance) -> float:
    """Weak-duality lower bound on the subproblem from three cheap dual-feasible points.

    Spread the balance evenly over scenarios, put it all on the upper bound,
    or saturate every scenario cap and return the excess through the lower bound.
    """
    if interval.empty:
        return math.inf
    mean = float(np.mean(d))
    a = -(p - instance.c) * mean
    b = -(p - instance.c) * interval.hi
    c = -(p - instance.s) * mean + (instance.c - instance.s) * interval.lo
    return max(a, b, c)


# --------------------------------------------------------------------------
# strategies

class Strategy(str, Enum):
    NAIVE = "naive"
    REFORMULATED = "reformulated"
    BD = "bd"
    BD_ANALYTIC = "bd_analytic"


@dataclass
class PsnpSolution:
    price: float
    q: float
    value: float
    strategy: str
    report: SolveReport
    seconds: float = 0.0
    intervals: list = field(default_factory=list)

    @property
    def candidate(self) -> int:
        return self.report.candidate


def _brute_cluster(points_scaled, scale, spec, n, z1, x, tree):
    if spec.kind == WeightKind.CART:
        return cart_cluster(tree, z1, x)
    q = query_point(z1, x) * scale
    dist = scaled_distances(points_scaled, q)
    idx = np.arange(n)
    if spec.kind == WeightKind.KNN:
        k = spec.resolve(n)
        return Cluster(np.lexsort((idx, dist))[:k])
    m = idx[dist <= spec.resolve(n)]
    if m.size == 0:
        raise EmptyCluster(f"no historical point within h={spec.resolve(n):g}")
    return Cluster(m)


def _grid_subproblem(d, p, instance, constraints, step):
    """Structure-free inner solve: scan q on a fixed grid and count satisfied scenarios."""
    top = min(instance.q_bar, float(d.max()) if d.size else 0.0)
    qs = np.arange(0.0, top + step, step)
    qs = qs[qs <= instance.q_bar]
    k = d.size
    best_q, best_v = None, math.inf
    for i in range(0, qs.size, 512):
        qq = qs[i: i + 512, None]
        l = loss(p, qq, d[None, :], instance)
        ok = np.ones(qq.shape[0], dtype=bool)
        for con in constraints:
            if isinstance(con, VarConstraint):
                hits = np.count_nonzero(l <= -con.v, axis=1)
                ok &= hits >= required_count(k, con.alpha_v)
            else:
                hits = np.count_nonzero(qq >= d[None, :], axis=1)
                ok &= hits >= required_count(k, con.alpha_s)
        if not ok.any():
            continue
        vals = np.where(ok, l.mean(axis=1), np.inf)
        j = int(np.argmin(vals))
        if vals[j] < best_v:
            best_q, best_v = float(qq[j, 0]), float(vals[j])
    return best_q, best_v


def solve_psnp(
    instance: PSNPInstance,
    dataset: HistoricalDataset,
    weight_spec: WeightSpec,
    x,
    constraints,
    strategy: Strategy | str = Strategy.BD_ANALYTIC,
    eps: float = 1e-12,
    mode: CutMode | str = CutMode.BOTH,
    naive_step: float = 0.05,
    tree=None,
    index=None,
) -> PsnpSolution:
    """Best (price, order quantity) for context ``x`` under one of four strategies.

    ``naive`` recomputes each price's cluster by a full distance scan and grid
    searches q with direct scenario counting; ``reformulated`` precomputes all
    clusters on one index, turns the constraints into intervals and scans
    all breakpoints of every price as one joint model, without screening; ``bd`` and ``bd_analytic`` run the Benders
    loop over the same precomputation, with breakpoint search or the closed
    form in the subproblem.
    """
    strategy = Strategy(strategy)
    constraints = list(constraints)
    prices = instance.prices
    grid = CandidateGrid(prices)
    y = dataset.y
    t0 = time.perf_counter()

    if strategy == Strategy.NAIVE:
        if weight_spec.kind == WeightKind.CART and tree is None:
            tree = train_cart(dataset, weight_spec)
        pts = dataset.points()
        scale = np.ones(pts.shape[1]) if weight_spec.scaling is None else np.asarray(weight_spec.scaling)
        pts_s = pts * scale

        def sub(t):
            cl = _brute_cluster(pts_s, scale, weight_spec, dataset.n, prices[t], x, tree)
            q, val = _grid_subproblem(y[cl.members], prices[t], instance, constraints, naive_step)
            if q is None:
                return SubproblemOutcome.infeasible()
            return SubproblemOutcome(OPTIMAL, q, val)

        report = solve_enumeration(grid, None, sub)
        return _finish(report, prices, strategy, t0, [])

    table = precompute_clusters(dataset, prices, x, weight_spec, index=index, tree=tree)
    demands = [y[cl.members] for cl in table.clusters]
    intervals = [feasible_interval_from_demands(d, p, instance, constraints) for d, p in zip(demands, prices)]

    if strategy == Strategy.REFORMULATED:
        def sub(t):
            q, val = breakpoint_scan(demands[t], prices[t], intervals[t], instance)
            if q is None:
                return SubproblemOutcome.infeasible()
            return SubproblemOutcome(OPTIMAL, q, val)

        report = solve_enumeration(grid, table, sub)
        return _finish(report, prices, strategy, t0, intervals)

    analytic = strategy == Strategy.BD_ANALYTIC
    tie_tol = 0.0 if analytic else 1e-9

    def sub(t):
        iv = intervals[t]
        if iv.empty:
            return SubproblemOutcome.infeasible()
        if analytic:
            q, val = optimum_from_demands(demands[t], prices[t], iv, instance)
        else:
            q, val = breakpoint_search(demands[t], prices[t], iv, instance)
        duals = duals_from_demands(q, demands[t], prices[t], iv, instance, table[t].members, tie_tol)
        return SubproblemOutcome(OPTIMAL, q, val, duals)

    def cutmaker(t, out):
        return PaperCut(float(-np.dot(out.duals.lambda1, demands[t])), out.duals.lambda2, out.duals.lambda3, t)

    coords = np.array([[iv.lo, iv.hi] for iv in intervals])
    seeds = [BoundCut(t, dual_bound(demands[t], prices[t], iv, instance)) for t, iv in enumerate(intervals)]
    report = benders_solve(grid, table, sub, cutmaker, eps=eps, mode=mode, coords=coords, initial_cuts=seeds)
    return _finish(report, prices, strategy, t0, intervals)


def _finish(report, prices, strategy, t0, intervals):
    sec = time.perf_counter() - t0
    report.seconds = sec
    report.method = strategy.value
    return PsnpSolution(float(prices[report.candidate]), float(report.z2), report.value, strategy.value, report, sec, intervals)
