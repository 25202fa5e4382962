"""Discrete-candidate solution framework.

With a finite set of uncertainty-affecting candidates the clusters can be
fixed in advance, which leaves one convex subproblem per candidate. Two
drivers sit on top of a candidate subsolver: plain enumeration and a Benders
loop whose master picks the candidate with the smallest cut-implied bound.

Benders modes:

``PAPER``
    Only the linear dual cuts produced by ``cutmaker``. These are not
    guaranteed to be valid across candidates, so the loop can stop early on a
    suboptimal candidate. Kept for measurement.
``EXACT``
    Per-candidate cuts only: the exact value of every evaluated candidate plus
    any ``BoundCut`` supplied up front. Terminates with the true optimum.
``BOTH``
    Selection, pruning and termination use the certified bounds of ``EXACT``;
    the dual cuts only break ties among open candidates with equal certified
    bound, so ``BOTH`` never needs more iterations than ``EXACT``. Dual cuts
    that overestimate a candidate's value are counted in
    ``SolveReport.paper_cut_violations``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import numpy as np

from .estimator import required_count
from .errors import AllCandidatesInfeasible, NonconvergenceGuard
from .weights import Cluster

OPTIMAL, INFEASIBLE, UNEXPLORED = "optimal", "infeasible", "unexplored"


class CutMode(str, Enum):
    PAPER = "paper"
    EXACT = "exact"
    BOTH = "both"


@dataclass(frozen=True)
class CandidateGrid:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if len(v) == 0:
            raise ValueError("candidate grid is empty")
        if len(np.unique(v, axis=0)) != len(v):
            raise ValueError("candidate grid contains duplicates")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


@dataclass
class SubproblemOutcome:
    status: str
    z2_star: Any = None
    value: float = math.inf
    duals: Any = None

    @classmethod
    def infeasible(cls):
        return cls(INFEASIBLE)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass(frozen=True)
class PaperCut:
    """``e >= constant + coeff_lo * lo_t - coeff_hi * hi_t`` for every candidate t."""

    constant: float
    coeff_lo: float
    coeff_hi: float
    source: int = -1

    def evaluate(self, coords: np.ndarray) -> np.ndarray:
        return self.constant + self.coeff_lo * coords[:, 0] - self.coeff_hi * coords[:, 1]


@dataclass(frozen=True)
class ExactCut:
    candidate: int
    exact_value: float


@dataclass(frozen=True)
class BoundCut:
    """Certified lower bound on one candidate's value; ``inf`` marks it infeasible."""

    candidate: int
    bound: float


@dataclass
class SolveReport:
    candidate: int
    z2: Any
    value: float
    statuses: list
    values: np.ndarray
    iterations: int
    evaluated_at: list = field(default_factory=list)
    lb_history: list = field(default_factory=list)
    ub_history: list = field(default_factory=list)
    paper_cut_violations: int = 0
    method: str = ""
    seconds: float = 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["candidate", "value", "status", "iterations"])
            for t, (st, val) in enumerate(zip(self.statuses, self.values)):
                w.writerow([t, repr(float(val)) if st == OPTIMAL else "", st, self.evaluated_at[t]])


def solve_enumeration(grid: CandidateGrid, cluster_table, subsolver: Callable[[int], SubproblemOutcome]) -> SolveReport:
    """Evaluate every candidate; argmin over the feasible ones, lowest index on ties."""
    n1 = len(grid)
    if cluster_table is not None and len(cluster_table) != n1:
        raise ValueError("cluster table does not cover the grid")
    outs = [subsolver(t) for t in range(n1)]
    values = np.array([o.value if o.optimal else np.inf for o in outs])
    if not np.isfinite(values).any():
        raise AllCandidatesInfeasible(f"all {n1} candidates infeasible")
    best = int(np.argmin(values))
    return SolveReport(
        candidate=best,
        z2=outs[best].z2_star,
        value=float(values[best]),
        statuses=[o.status for o in outs],
        values=values,
        iterations=n1,
        evaluated_at=list(range(1, n1 + 1)),
        method="enumeration",
    )


def critical_scenario(cluster: Cluster, dataset, order, alpha: float) -> int:
    """Critical scenario under nested sub-feasible sets.

    ``order`` lists the cluster members from hardest (smallest feasible set)
    to easiest. Returns the member at 1-based rank ``k*``, the largest rank
    whose suffix ``order[k*-1:]`` still carries weight ``>= 1 - alpha``; its
    set is the whole approximated feasible region.
    """
    order = np.asarray(order, dtype=np.int64)
    k = cluster.k
    if order.size != k or not np.array_equal(np.sort(order), cluster.members):
        raise ValueError("order must be a permutation of the cluster members")
    rank = k - required_count(k, alpha) + 1
    return int(order[rank - 1])


def _relative_gap(ub: float, lb: float) -> float:
    if not (math.isfinite(ub) and math.isfinite(lb)):
        return math.inf
    # signed: a lower bound above the incumbent (possible with dual cuts) also stops
    return (ub - lb) / max(abs(lb), 1e-12)


def master_select(cuts, grid, explored, coords=None, excluded=()):
    """Candidate with the smallest cut-implied bound and that bound.

    Every ``PaperCut`` applies to all candidates (needs ``coords``: one
    ``(lo, hi)`` row per candidate); ``ExactCut`` and ``BoundCut`` bind only
    their own candidate. Uncut candidates sit at ``-inf``. Lowest index wins
    ties. ``explored`` is accepted for interface symmetry; explored candidates
    carry their exact cut.
    """
    n1 = len(grid)
    lb = np.full(n1, -np.inf)
    for cut in cuts:
        if isinstance(cut, PaperCut):
            lb = np.maximum(lb, cut.evaluate(np.asarray(coords, dtype=float)))
        elif isinstance(cut, ExactCut):
            lb[cut.candidate] = max(lb[cut.candidate], cut.exact_value)
        else:
            lb[cut.candidate] = max(lb[cut.candidate], cut.bound)
    for t in excluded:
        lb[t] = np.inf
    t = int(np.argmin(lb))
    return t, float(lb[t])


def benders_solve(
    grid: CandidateGrid,
    cluster_table,
    subsolver: Callable[[int], SubproblemOutcome],
    cutmaker: Callable[[int, SubproblemOutcome], PaperCut] | None = None,
    eps: float = 1e-12,
    mode: CutMode | str = CutMode.BOTH,
    coords=None,
    initial_cuts=(),
    tol: float = 1e-9,
) -> SolveReport:
    if not eps > 0:
        raise ValueError("eps must be positive")
    mode = CutMode(mode)
    n1 = len(grid)
    if cluster_table is not None and len(cluster_table) != n1:
        raise ValueError("cluster table does not cover the grid")
    if mode != CutMode.EXACT and (cutmaker is None or coords is None):
        raise ValueError(f"mode {mode.value} needs a cutmaker and per-candidate coords")
    coords = None if coords is None else np.asarray(coords, dtype=float)

    valid_lb = np.full(n1, -np.inf)
    paper_lb = np.full(n1, -np.inf)
    excluded = np.zeros(n1, dtype=bool)
    explored = np.zeros(n1, dtype=bool)
    for cut in initial_cuts:
        if isinstance(cut, BoundCut):
            if math.isinf(cut.bound) and cut.bound > 0:
                excluded[cut.candidate] = True
            valid_lb[cut.candidate] = max(valid_lb[cut.candidate], cut.bound)
        elif isinstance(cut, PaperCut):
            paper_lb = np.maximum(paper_lb, cut.evaluate(coords))
        else:
            raise TypeError(f"unsupported initial cut {cut!r}")

    values = np.full(n1, np.inf)
    statuses = [UNEXPLORED] * n1
    evaluated_at = [0] * n1
    z2s = [None] * n1
    ub, lb = math.inf, -math.inf
    best = -1
    lbs, ubs = [], []
    violations = 0
    r = 0

    while True:
        live = ~excluded
        if not live.any():
            raise AllCandidatesInfeasible(f"all {n1} candidates infeasible")
        if mode == CutMode.BOTH:
            open_ = live & ~explored
            if math.isfinite(ub):
                open_ &= valid_lb < ub - tol * max(1.0, abs(ub))
            if not open_.any():
                if best < 0:
                    raise AllCandidatesInfeasible(f"all {n1} candidates infeasible")
                lb = max(lb, ub)
                break
            # certified bound first; the dual-cut value only breaks its ties
            cand = np.flatnonzero(open_)
            t = int(cand[np.lexsort((cand, paper_lb[cand], valid_lb[cand]))[0]])
            master = min(ub, float(valid_lb[open_].min()))
        else:
            bounds = np.where(live, valid_lb if mode == CutMode.EXACT else paper_lb, np.inf)
            t = int(np.argmin(bounds))
            master = float(bounds[t])
        lb = max(lb, master)
        lbs.append(lb)
        ubs.append(ub)
        if best >= 0 and _relative_gap(ub, lb) <= eps:
            break
        if explored[t]:
            break
        r += 1
        if r > n1:
            raise NonconvergenceGuard(f"{r} iterations on {n1} candidates")
        out = subsolver(t)
        explored[t] = True
        evaluated_at[t] = r
        statuses[t] = out.status
        if not out.optimal:
            excluded[t] = True
            continue
        values[t] = out.value
        z2s[t] = out.z2_star
        if paper_lb[t] > out.value + tol * max(1.0, abs(out.value)):
            violations += 1
        valid_lb[t] = max(valid_lb[t], out.value)
        if out.value < ub:
            ub, best = out.value, t
        if mode != CutMode.EXACT:
            paper_lb = np.maximum(paper_lb, cutmaker(t, out).evaluate(coords))

    if best < 0:
        raise AllCandidatesInfeasible(f"all {n1} candidates infeasible")
    lbs.append(lb)
    ubs.append(ub)
    return SolveReport(
        candidate=best,
        z2=z2s[best],
        value=float(ub),
        statuses=statuses,
        values=values,
        iterations=r,
        evaluated_at=evaluated_at,
        lb_history=lbs,
        ub_history=ubs,
        paper_cut_violations=violations,
        method=f"benders-{mode.value}",
    )
