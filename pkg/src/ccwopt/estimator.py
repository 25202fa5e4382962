"""Weighted sample-average estimates over a cluster.

Loss and constraint callables receive the decision and the *array* of member
outcomes and must broadcast over it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import HistoricalDataset
from .weights import Cluster

# guards floor(k * alpha) against alpha values like 0.29 where k * alpha
# lands a hair under an integer
_BUDGET_EPS = 1e-9
_LEVEL_EPS = 1e-12


@dataclass(frozen=True)
class ChanceConstraintSpec:
    psi: Callable
    alpha: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


def violation_budget(k: int, alpha: float) -> int:
    """Largest number of members allowed to violate: floor(k * alpha)."""
    return math.floor(k * alpha + _BUDGET_EPS)


def required_count(k: int, alpha: float) -> int:
    """ceil(k (1 - alpha)) written through the budget so both agree exactly."""
    return k - violation_budget(k, alpha)


def meets_level(prob: float, alpha: float) -> bool:
    return prob >= 1.0 - alpha - _LEVEL_EPS


def member_outcomes(cluster: Cluster, dataset: HistoricalDataset) -> np.ndarray:
    return dataset.y[cluster.members]


def estimate_objective(cluster: Cluster, dataset: HistoricalDataset, loss, z) -> float:
    return float(np.mean(loss(z, member_outcomes(cluster, dataset))))


def estimate_probability(cluster: Cluster, dataset: HistoricalDataset, psi, z) -> float:
    vals = np.broadcast_to(psi(z, member_outcomes(cluster, dataset)), (cluster.k,))
    return float(np.count_nonzero(vals <= 0)) / cluster.k


def violations(cluster: Cluster, dataset: HistoricalDataset, psi, z) -> int:
    vals = np.broadcast_to(psi(z, member_outcomes(cluster, dataset)), (cluster.k,))
    return int(np.count_nonzero(vals > 0))


def is_feasible(cluster: Cluster, dataset: HistoricalDataset, constraints, z) -> bool:
    return all(
        violations(cluster, dataset, c.psi, z) <= violation_budget(cluster.k, c.alpha) for c in constraints
    )
