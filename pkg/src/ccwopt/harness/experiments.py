"""Sample-efficiency, baseline-comparison and speed studies.

Every random quantity is keyed by ``derive_seed(config.seed, TAG, ...)`` so a
cell's result does not depend on which worker ran it or in what order.
Results are aggregated in config order.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import (
    McConfig,
    TrueModel,
    generate_dataset,
    mc_cvar_loss,
    mc_demand,
    mc_probability,
    sample_context,
)
from ..errors import AllCandidatesInfeasible, CCWError, ConditioningEventEmpty, EmptyCluster
from ..estimator import ChanceConstraintSpec, estimate_probability, is_feasible
from ..newsvendor import PSNPInstance, Strategy, VarConstraint, loss, solve_psnp
from ..weights import WeightKind, build_index, single_cluster, train_cart
from .baselines import parametric_solve, train_residual_baseline
from .config import ExperimentConfig, derive_seed

TAG_PAIR_X, TAG_PAIR_P, TAG_PAIR_MC, TAG_GAP_DATA = 11, 12, 13, 14
TAG_CMP_X, TAG_CMP_DATA, TAG_CMP_MC = 21, 22, 23
TAG_BENCH_X, TAG_BENCH_DATA = 31, 32

STRATEGIES = (Strategy.NAIVE, Strategy.REFORMULATED, Strategy.BD, Strategy.BD_ANALYTIC)


class AgreementError(CCWError):
    """Strategies disagreed on the optimum, so their timings are not comparable."""


def ordered_map(fn, items, threads: int = 1) -> list:
    """``map`` whose output order is the input order whatever the thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _model(config: ExperimentConfig) -> TrueModel:
    return TrueModel(config.relationship_mode, config.uncertainty_mode)


def _fmt(v) -> str:
    return repr(float(v))


# --------------------------------------------------------------------------
# sample efficiency

@dataclass(frozen=True)
class GapPair:
    index: int
    price: float
    x: np.ndarray
    q_ref: float
    g_true: float


@dataclass
class GapTable:
    rows: list  # (N, weight, gap) in config order
    pairs: list
    fits: dict = field(default_factory=dict)

    def gap(self, n: int, weight: str) -> float:
        for r in self.rows:
            if r[0] == n and r[1] == weight:
                return r[2]
        raise KeyError((n, weight))

    def series(self, weight: str):
        pts = [(r[0], r[2]) for r in self.rows if r[1] == weight]
        return [p[0] for p in pts], [p[1] for p in pts]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "weight", "gap"])
            for n, weight, gap in self.rows:
                w.writerow([n, weight, _fmt(gap)])

    def metadata(self) -> dict:
        return {
            "reference_decision": "q_ref = Monte Carlo mean demand at (p, x)",
            "pairs": [
                {"pair": p.index, "price": p.price, "x": [float(v) for v in p.x], "q_ref": p.q_ref, "g_true": p.g_true}
                for p in self.pairs
            ],
            "fits": self.fits,
        }


def gap_pairs(config: ExperimentConfig, instance: PSNPInstance | None = None) -> list:
    """The (x, p) pairs with their reference order and true probability."""
    model, instance = _model(config), instance or PSNPInstance()
    out = []
    for j in range(config.n_pairs):
        x = sample_context(model, derive_seed(config.seed, TAG_PAIR_X, j))
        p = float(np.random.default_rng(derive_seed(config.seed, TAG_PAIR_P, j)).choice(instance.prices))
        d = mc_demand(model, p, x, McConfig(config.mc_draws, derive_seed(config.seed, TAG_PAIR_MC, j)))
        q = float(d.mean())
        g = mc_probability(model, p, q, x, config.gap_v, None, instance.c, instance.s, draws=d)
        out.append(GapPair(j, p, x, q, g))
    return out


def _gap_cell(config, model, instance, specs, n, pair, r):
    ds = generate_dataset(model, n, instance.prices, derive_seed(config.seed, TAG_GAP_DATA, n, pair.index, r))
    v = config.gap_v

    def psi(q, y):
        return loss(pair.price, q, y, instance) + v

    out = []
    indexes = {}
    for spec in specs:
        tree = index = None
        if spec.kind == WeightKind.CART:
            tree = train_cart(ds, spec)
        else:
            if spec.scaling not in indexes:
                indexes[spec.scaling] = build_index(ds, spec.scaling)
            index = indexes[spec.scaling]
        try:
            cl = single_cluster(ds, spec, pair.price, pair.x, index=index, tree=tree)
        except EmptyCluster as exc:
            raise EmptyCluster(f"{exc}; N={n}, weight={spec.kind.value}, pair={pair.index}, dataset={r}") from None
        out.append(abs(estimate_probability(cl, ds, psi, pair.q_ref) - pair.g_true))
    return out


def run_sample_efficiency(config: ExperimentConfig, instance: PSNPInstance | None = None) -> GapTable:
    """Sup over pairs of the dataset-averaged |g_hat - g_true| for each N and weight."""
    instance = instance or PSNPInstance()
    model = _model(config)
    specs = config.weight_specs()
    pairs = gap_pairs(config, instance)
    cells = [(n, pair, r) for n in config.n_schedule for pair in pairs for r in range(config.datasets_per_pair)]
    errs = ordered_map(lambda c: _gap_cell(config, model, instance, specs, *c), cells, config.threads)
    errs = np.array(errs).reshape(len(config.n_schedule), len(pairs), config.datasets_per_pair, len(specs))
    sup = errs.mean(axis=2).max(axis=1)  # (N, weight)
    rows = [(int(n), s.kind.value, float(sup[i, w])) for i, n in enumerate(config.n_schedule) for w, s in enumerate(specs)]
    table = GapTable(rows, pairs)
    if len(config.n_schedule) >= 2:
        for s in specs:
            ns, gs = table.series(s.kind.value)
            c, r2 = fit_rate(gs, ns)
            fit = {"C": c, "r_squared": r2}
            if config.free_exponent:
                cf, b, r2f = fit_rate_free(gs, ns)
                fit.update({"C_free": cf, "exponent": b, "r_squared_free": r2f})
            table.fits[s.kind.value] = fit
    return table


def _rate_shape(n, b=0.4):
    n = np.asarray(n, dtype=float)
    return np.log(n) / n**b


def _r_squared(g, fitted) -> float:
    ss_res = float(np.sum((g - fitted) ** 2))
    ss_tot = float(np.sum((g - g.mean()) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else -math.inf
    return 1.0 - ss_res / ss_tot


def fit_rate(gaps, n_values):
    """Least-squares ``C`` in ``gap = C log N / N^0.4`` and the fit's R^2."""
    g = np.asarray(gaps, dtype=float)
    f = _rate_shape(n_values)
    if g.shape != f.shape or g.size < 2:
        raise ValueError("need matching gaps and N values, at least two")
    c = float(g @ f / (f @ f))
    return c, _r_squared(g, c * f)


def fit_rate_free(gaps, n_values):
    """``gap = C log N / N^b`` with ``b`` free, fitted in log space. Returns (C, b, R^2)."""
    g = np.asarray(gaps, dtype=float)
    n = np.asarray(n_values, dtype=float)
    if np.any(g <= 0):
        raise ValueError("free-exponent fit needs positive gaps")
    A = np.column_stack([np.ones_like(n), -np.log(n)])
    (logc, b), *_ = np.linalg.lstsq(A, np.log(g / np.log(n)), rcond=None)
    c = float(np.exp(logc))
    return c, float(b), _r_squared(g, c * _rate_shape(n, b))


# --------------------------------------------------------------------------
# comparison with residual baselines

@dataclass(frozen=True)
class RunOutcome:
    v: float
    alpha: float
    method: str
    repetition: int
    status: str  # ok | infeasible | failed
    price: float = math.nan
    q: float = math.nan
    cvar_loss: float = math.nan  # nan when no draw meets the target
    feasible_rate: float = math.nan


@dataclass
class ComparisonTable:
    rows: list  # (v, alpha, method, cvar_loss | None, feasible_rate | None)
    runs: list

    def cell(self, v, alpha, method):
        for r in self.rows:
            if r[0] == v and r[1] == alpha and r[2] == method:
                return r
        raise KeyError((v, alpha, method))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["v", "alpha", "method", "cvar_loss", "feasible_rate"])
            for v, a, m, cvar, rate in self.rows:
                w.writerow([_fmt(v), _fmt(a), m, "failed" if cvar is None else _fmt(cvar),
                            "failed" if rate is None else _fmt(rate)])

    def runs_to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["v", "alpha", "method", "repetition", "status", "price", "q", "cvar_loss", "feasible_rate"])
            for o in self.runs:
                w.writerow([_fmt(o.v), _fmt(o.alpha), o.method, o.repetition, o.status,
                            _fmt(o.price), _fmt(o.q), _fmt(o.cvar_loss), _fmt(o.feasible_rate)])


def _evaluate(model, instance, x, p, q, v, draws_seed, n_draws):
    d = mc_demand(model, p, x, McConfig(n_draws, draws_seed))
    rate = mc_probability(model, p, q, x, v, None, instance.c, instance.s, draws=d)
    try:
        cvar = mc_cvar_loss(model, p, q, x, v, None, instance.c, instance.s, draws=d)
    except ConditioningEventEmpty:
        cvar = math.nan
    if not 0.0 <= rate <= 1.0:
        raise AssertionError(f"feasible rate {rate} outside [0, 1]")
    return cvar, rate


def _comparison_rep(config, model, instance, r):
    x = sample_context(model, derive_seed(config.seed, TAG_CMP_X, r))
    ds_key = r if config.regenerate_dataset else 0
    ds = generate_dataset(model, config.comparison_n, instance.prices, derive_seed(config.seed, TAG_CMP_DATA, ds_key))
    mc_seed = derive_seed(config.seed, TAG_CMP_MC, r)

    helpers = {}
    for spec in config.comparison_specs():
        if spec.kind == WeightKind.CART:
            helpers[spec.kind.value] = (spec, None, train_cart(ds, spec))
        else:
            helpers[spec.kind.value] = (spec, build_index(ds, spec.scaling), None)
    baselines = {}
    for kind in config.baselines:
        try:
            baselines[kind] = train_residual_baseline(ds, kind, seed=derive_seed(config.seed, TAG_CMP_DATA, ds_key, 1))
        except CCWError as exc:
            baselines[kind] = exc

    out = []
    for v, alpha in config.targets:
        v, alpha = float(v), float(alpha)
        con = VarConstraint(v, alpha)
        decisions = {}
        for name, (spec, index, tree) in helpers.items():
            try:
                sol = solve_psnp(instance, ds, spec, x, [con], Strategy.BD_ANALYTIC, index=index, tree=tree)
            except AllCandidatesInfeasible:
                decisions[name] = "infeasible"
                continue
            except CCWError:
                decisions[name] = "failed"
                continue
            cl = single_cluster(ds, spec, sol.price, x, index=index, tree=tree)
            psi = ChanceConstraintSpec(lambda q, y, p=sol.price: loss(p, q, y, instance) + v, alpha)
            if not is_feasible(cl, ds, [psi], sol.q):
                raise AssertionError(f"{name}: returned decision violates its own approximated constraint")
            decisions[name] = (sol.price, sol.q)
        for name, mdl in baselines.items():
            if isinstance(mdl, CCWError):
                decisions[name] = "failed"
                continue
            try:
                decisions[name] = parametric_solve(mdl, instance, x, con)
            except AllCandidatesInfeasible:
                decisions[name] = "infeasible"
        for name, dec in decisions.items():
            if isinstance(dec, str):
                out.append(RunOutcome(v, alpha, name, r, dec))
                continue
            cvar, rate = _evaluate(model, instance, x, dec[0], dec[1], v, mc_seed, config.mc_draws)
            out.append(RunOutcome(v, alpha, name, r, "ok", dec[0], dec[1], cvar, rate))
    return out


def run_comparison(config: ExperimentConfig, instance: PSNPInstance | None = None) -> ComparisonTable:
    """Actual CVaR-style loss and feasible rate of CCW and baseline decisions, averaged over repetitions."""
    instance = instance or PSNPInstance()
    model = _model(config)
    per_rep = ordered_map(lambda r: _comparison_rep(config, model, instance, r), range(config.repetitions), config.threads)
    runs = [o for rep in per_rep for o in rep]
    methods = [s.kind.value for s in config.comparison_specs()] + list(config.baselines)
    rows = []
    for v, alpha in config.targets:
        for m in methods:
            cell = [o for o in runs if o.v == float(v) and o.alpha == float(alpha) and o.method == m and o.status == "ok"]
            rates = [o.feasible_rate for o in cell]
            cvars = [o.cvar_loss for o in cell if not math.isnan(o.cvar_loss)]
            rows.append((float(v), float(alpha), m,
                         float(np.mean(cvars)) if cvars else None,
                         float(np.mean(rates)) if rates else None))
    return ComparisonTable(rows, runs)


def improvement(ccw: float, baseline: float) -> float:
    """Relative gain of a (more negative) loss over a baseline loss."""
    return (baseline - ccw) / abs(baseline)


# --------------------------------------------------------------------------
# speed benchmark

@dataclass
class SpeedTable:
    rows: list  # (N, strategy, seconds)
    values: dict = field(default_factory=dict)  # N -> {strategy: optimal value}

    def seconds(self, n, strategy) -> float:
        for r in self.rows:
            if r[0] == n and r[1] == Strategy(strategy).value:
                return r[2]
        raise KeyError((n, strategy))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "strategy", "seconds"])
            for n, st, sec in self.rows:
                w.writerow([n, st, f"{sec:.6f}"])


def check_agreement(values: dict, instance: PSNPInstance, naive_step: float, tol: float = 1e-9) -> None:
    exact = [v for k, v in values.items() if k != Strategy.NAIVE.value]
    ref = min(exact)
    if max(exact) - ref > tol * max(1.0, abs(ref)):
        raise AgreementError(f"strategies disagree: {values}")
    if Strategy.NAIVE.value in values:
        # a grid point is feasible for the exact model, so Naive can only lose
        # up to one grid step of slope
        slack = naive_step * (instance.prices.max() - instance.s)
        gap = values[Strategy.NAIVE.value] - ref
        if gap < -tol * max(1.0, abs(ref)) or gap > slack:
            raise AgreementError(f"naive value off by {gap}: {values}")


def run_speed_benchmark(config: ExperimentConfig, instance: PSNPInstance | None = None,
                        strategies=STRATEGIES, naive_step: float = 0.05) -> SpeedTable:
    """Min-of-trials wall time per strategy and N, single-threaded."""
    instance = instance or PSNPInstance()
    model = _model(config)
    spec = config.bench_spec()
    con = VarConstraint(float(config.bench_target[0]), float(config.bench_target[1]))
    x = sample_context(model, derive_seed(config.seed, TAG_BENCH_X, 0))
    rows, values = [], {}
    for n in config.bench_schedule:
        ds = generate_dataset(model, int(n), instance.prices, derive_seed(config.seed, TAG_BENCH_DATA, int(n)))
        timing, vals = {}, {}
        for st in strategies:
            st = Strategy(st)
            best = math.inf
            for _ in range(config.bench_trials):
                t0 = time.perf_counter()
                sol = solve_psnp(instance, ds, spec, x, [con], st, naive_step=naive_step)
                best = min(best, time.perf_counter() - t0)
            timing[st.value], vals[st.value] = best, sol.value
        check_agreement(vals, instance, naive_step)
        values[int(n)] = vals
        rows.extend((int(n), k, t) for k, t in timing.items())
    return SpeedTable(rows, values)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
