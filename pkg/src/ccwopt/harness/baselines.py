"""Residual-based parametric baselines.

A linear demand model ``s*(p, x)`` over features ``[1, p, p^2, x0..x9]``
plus its in-sample residuals gives a scenario set ``s*(p, x) + eps_i`` for
every candidate price; the newsvendor interval machinery then runs on it
exactly as it does on a cluster.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.linear_model import Lasso

from ..dataset import HistoricalDataset
from ..errors import AllCandidatesInfeasible, SingularDesign
from ..newsvendor import PSNPInstance, VarConstraint, optimum_from_demands, var_interval_from_demands

RIDGE_JITTER = 1e-8


def features(p, x) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=float)).reshape(-1, 1)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x = np.broadcast_to(x, (p.shape[0], x.shape[1]))
    return np.hstack([np.ones_like(p), p, p**2, x])


@dataclass(frozen=True)
class ParametricModel:
    kind: str
    coefficients: np.ndarray
    residuals: np.ndarray
    penalty: float = 0.0

    def predict(self, p, x) -> np.ndarray:
        return features(p, x) @ self.coefficients


def _ols(F, y):
    """Normal equations; a ridge jitter is added only if the plain factorization fails."""
    A, b = F.T @ F, F.T @ y
    for jitter in (0.0, RIDGE_JITTER * max(1.0, float(np.max(np.diag(A))))):
        try:
            coef = cho_solve(cho_factor(A + jitter * np.eye(len(A))), b)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(coef)):
            return coef
    raise SingularDesign("normal equations singular after ridge jitter")


def _lasso_fit(F, y, lam):
    """Lasso on standardized columns; coefficients mapped back to raw features."""
    Z = F[:, 1:]
    mu, sd = Z.mean(axis=0), Z.std(axis=0)
    live = sd > 0
    coef = np.zeros(F.shape[1])
    if live.any():
        Zs = (Z[:, live] - mu[live]) / sd[live]
        m = Lasso(alpha=lam, fit_intercept=True, max_iter=20_000, tol=1e-8, selection="cyclic")
        m.fit(Zs, y)
        raw = m.coef_ / sd[live]
        coef[1:][live] = raw
        coef[0] = m.intercept_ - raw @ mu[live]
    else:
        coef[0] = y.mean()
    return coef


def _lasso_path(F, y):
    Z = F[:, 1:]
    sd = Z.std(axis=0)
    Zs = (Z - Z.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    lam_max = float(np.max(np.abs(Zs.T @ (y - y.mean())))) / len(y)
    return lam_max * np.logspace(0, -4, 12)


def train_residual_baseline(dataset: HistoricalDataset, kind: str, penalty: float | None = None,
                            seed: int = 0, val_fraction: float = 0.2) -> ParametricModel:
    """Fit ``s*`` by OLS or Lasso and keep the training residuals.

    Lasso picks its penalty on a seeded hold-out split unless ``penalty`` is
    given, then refits on all rows.
    """
    if dataset.d_z1 != 1:
        raise ValueError("baselines expect a scalar price")
    F = features(dataset.z1[:, 0], dataset.x)
    y = np.asarray(dataset.y)
    if kind == "ols":
        coef = _ols(F, y)
        lam = 0.0
    elif kind == "lasso":
        if penalty is None:
            perm = np.random.default_rng(seed).permutation(len(y))
            n_val = max(1, int(round(val_fraction * len(y))))
            val, tr = perm[:n_val], perm[n_val:]
            if tr.size < 2:
                raise ValueError("too few rows for a validation split")
            best = None
            for lam in _lasso_path(F[tr], y[tr]):
                err = float(np.mean((F[val] @ _lasso_fit(F[tr], y[tr], lam) - y[val]) ** 2))
                if best is None or err < best[0]:
                    best = (err, lam)
            penalty = best[1]
        lam = float(penalty)
        coef = _lasso_fit(F, y, lam)
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    res = y - F @ coef
    res.setflags(write=False)
    coef.setflags(write=False)
    return ParametricModel(kind, coef, res, lam)


def parametric_search(model: ParametricModel, instance: PSNPInstance, x, constraint: VarConstraint):
    """Best feasible ``(p, q, value)`` over the price grid, lowest price on ties."""
    prices = instance.prices
    centers = model.predict(prices, x)
    best = (None, None, math.inf)
    for p, s in zip(prices, centers):
        d = np.maximum(s + model.residuals, 0.0)
        iv = var_interval_from_demands(d, p, instance, constraint)
        if iv.empty:
            continue
        q, val = optimum_from_demands(d, p, iv, instance)
        if val < best[2]:
            best = (float(p), float(q), float(val))
    if best[0] is None:
        raise AllCandidatesInfeasible(f"{model.kind}: no price admits the profit target")
    return best


def parametric_solve(model: ParametricModel, instance: PSNPInstance, x, constraint: VarConstraint):
    p, q, _ = parametric_search(model, instance, x, constraint)
    return p, q
