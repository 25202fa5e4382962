import math
from fractions import Fraction

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ccwopt.dataset import HistoricalDataset
from ccwopt.estimator import ChanceConstraintSpec, estimate_probability, is_feasible, meets_level, violation_budget
from ccwopt.newsvendor import (
    FeasibleInterval,
    PSNPInstance,
    SlConstraint,
    VarConstraint,
    dual_objective,
    duals_from_demands,
    fractile_rank,
    loss,
    optimum_from_demands,
    sl_bound_from_demands,
    var_interval_from_demands,
)
from ccwopt.solver import critical_scenario
from ccwopt.weights import Cluster, WeightSpec, build_index, train_cart
from oracles import brute_knn, brute_radius, subset_feasible_region, var_feasible_on_grid

INST = PSNPInstance()
coord = st.floats(-5, 5, allow_nan=False).map(lambda v: round(v, 1))  # coarse values make ties common


@st.composite
def point_sets(draw, max_n=40):
    n = draw(st.integers(1, max_n))
    pts = draw(arrays(float, (n, 3), elements=coord))
    q = draw(arrays(float, 3, elements=coord))
    return pts, q


def as_dataset(pts, y=None):
    y = np.zeros(len(pts)) if y is None else y
    return HistoricalDataset(pts[:, :1], pts[:, 1:], y)


@given(point_sets(), st.data())
def test_knn_cardinality_and_oracle(ps, data):
    pts, q = ps
    k = data.draw(st.integers(1, len(pts)))
    idx = build_index(as_dataset(pts))
    m = idx.knn(q[0], q[1:], k)
    assert m.size == k
    assert np.array_equal(m, brute_knn(pts, q, k))
    assert np.array_equal(idx.knn_batch(q[None, :], k)[0], m)
    w = Cluster(m).weights(len(pts))
    assert math.isclose(w.sum(), 1.0) and set(np.unique(w)) <= {0.0, 1.0 / k}


@given(point_sets(), st.floats(0.01, 8), st.floats(0.01, 8))
def test_radius_oracle_and_monotone(ps, h1, h2):
    pts, q = ps
    h1, h2 = sorted((h1, h2))
    idx = build_index(as_dataset(pts))
    a, b = idx.radius(q[0], q[1:], h1), idx.radius(q[0], q[1:], h2)
    assert np.array_equal(a, brute_radius(pts, q, h1))
    assert np.array_equal(idx.radius_batch(q[None, :], h2)[0], b)
    assert set(a) <= set(b)


@given(st.integers(3, 80), st.integers(1, 10), st.booleans(), st.booleans(), st.integers(0, 5))
def test_cart_partition_and_leaf_size(n, min_leaf, honest, rsplit, seed):
    assume(min_leaf <= n - 1)
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3)).round(1)
    ds = as_dataset(pts, rng.normal(size=n))
    tree = train_cart(ds, WeightSpec("cart", min_leaf=min_leaf, honest=honest, random_split=rsplit, split_seed=seed))
    leaves = [tree.leaf_members[l] for l in tree.leaves()]
    allm = np.concatenate(leaves)
    assert len(np.unique(allm)) == allm.size
    if not honest:
        assert np.array_equal(np.sort(allm), np.arange(n))
        assert all(l.size >= min_leaf for l in leaves)
        for i in range(n):
            assert i in tree.leaf_members[tree.leaf_of(pts[i])]


@given(st.integers(1, 200), st.integers(1, 199), st.integers(2, 200))
def test_budget_probability_equivalence(k, num, den):
    assume(num < den)
    alpha = num / den
    exact = Fraction(num, den)
    for viol in range(k + 1):
        by_budget = viol <= violation_budget(k, alpha)
        by_level = Fraction(k - viol, k) >= 1 - exact
        assert by_budget == by_level
        assert meets_level((k - viol) / k, alpha) == by_level


@given(arrays(float, st.integers(1, 30), elements=st.floats(0, 50)), st.floats(0.01, 0.99))
def test_estimator_range_and_feasibility(y, alpha):
    ds = as_dataset(np.zeros((y.size, 3)), y)
    cl = Cluster(np.arange(y.size))
    psi = lambda z, d: d - z  # noqa: E731
    prob = estimate_probability(cl, ds, psi, 25.0)
    assert 0.0 <= prob <= 1.0
    assert is_feasible(cl, ds, [ChanceConstraintSpec(psi, alpha)], 25.0) == meets_level(prob, alpha)


@given(st.integers(1, 12), st.floats(0.01, 0.99), st.integers(0, 10_000))
def test_critical_scenario_matches_subsets(k, alpha, seed):
    rng = np.random.default_rng(seed)
    thr = rng.integers(0, 20, k).astype(float)  # repeated thresholds keep the sets nested but tied
    ds = as_dataset(np.zeros((k, 3)), thr)
    qs = np.arange(-1, 21, 0.5)
    sets = [qs >= t for t in thr]
    order = np.lexsort((np.arange(k), -thr))
    crit = critical_scenario(Cluster(np.arange(k)), ds, order, alpha)
    assert np.array_equal(subset_feasible_region(sets, alpha), sets[crit])


@given(st.sampled_from(list(INST.prices)), st.floats(0, 100), st.floats(0, 200))
def test_loss_shape(p, d, q):
    base = -(p - INST.c) * d
    assert loss(p, q, d, INST) >= base - 1e-9 * max(1.0, abs(base))
    assert loss(p, d, d, INST) == base
    assert loss(p, 0.0, d, INST) == 0.0
    if q < d:
        assert loss(p, q, d, INST) > loss(p, min(d, q + 1.0), d, INST) or q + 1.0 > d
    if q > d:
        assert loss(p, q + 1.0, d, INST) > loss(p, q, d, INST)


demand_sets = arrays(float, st.integers(1, 20), elements=st.integers(0, 40).map(float))


@given(demand_sets, st.sampled_from([12.0, 20.0, 29.9]), st.floats(-50, 300).map(lambda v: round(v, 3)),
       st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_var_interval_monotone_in_alpha(d, p, v, a1, a2):
    a1, a2 = sorted((a1, a2))
    i1 = var_interval_from_demands(d, p, INST, VarConstraint(v, a1))
    i2 = var_interval_from_demands(d, p, INST, VarConstraint(v, a2))
    assert i1.lo == i2.lo and i2.hi >= i1.hi
    assert sl_bound_from_demands(d, SlConstraint(a2)) <= sl_bound_from_demands(d, SlConstraint(a1))


@given(demand_sets, st.sampled_from([12.0, 20.0, 29.9]), st.floats(-50, 300).map(lambda v: round(v, 3)),
       st.floats(0.05, 0.95))
def test_var_interval_against_grid(d, p, v, alpha):
    iv = var_interval_from_demands(d, p, INST, VarConstraint(v, alpha))
    top = (p - INST.s) * d.max() / (INST.c - INST.s) + 1
    qs = np.arange(0, top, 0.01)
    ok = var_feasible_on_grid(d, p, iv.v_effective, alpha, qs)
    # integer demands put grid points exactly on a boundary, where the last
    # ulp decides; those points are excluded here (continuous data in the
    # acceptance suite checks every point)
    near = (np.abs(qs - iv.lo) <= 1e-9 * max(1.0, abs(iv.lo))) | (np.abs(qs - iv.hi) <= 1e-9 * max(1.0, abs(iv.hi)))
    assert np.array_equal(ok[~near], iv.contains(qs)[~near])


@given(demand_sets, st.sampled_from([10.0, 15.5, 29.9]), st.floats(0, 30), st.floats(0, 60))
def test_fractile_optimum_and_duality(d, p, lo, width):
    iv = FeasibleInterval(lo, lo + width)
    n = fractile_rank(d.size, p, INST)
    assert 1 <= n <= d.size
    q, val = optimum_from_demands(d, p, iv, INST)
    du = duals_from_demands(q, d, p, iv, INST)
    assert np.all(du.lambda1 >= 0) and np.all(du.lambda1 <= (p - INST.s) / d.size + 1e-12)
    assert du.lambda2 >= 0 and du.lambda3 >= 0
    assert abs(dual_objective(du, d, iv) - val) <= 1e-9 * max(1.0, abs(val))


@given(st.floats(0, 60), st.floats(0, 60), st.sampled_from([10.0, 20.0, 29.9]), st.floats(-50, 300))
def test_scenario_sets_nested_by_demand(d1, d2, p, v):
    d1, d2 = sorted((d1, d2))
    qs = np.linspace(0, 700, 3501)
    s1 = loss(p, qs, d1, INST) <= -v
    s2 = loss(p, qs, d2, INST) <= -v
    assert not np.any(s1 & ~s2)
