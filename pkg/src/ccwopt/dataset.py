"""Historical samples, the synthetic location-scale demand model, and a
Monte Carlo ground-truth oracle for that model.

Randomness is chunked: block ``j`` of any generated stream is drawn from a
Philox generator keyed by ``SeedSequence([seed, j])``, so the output does not
depend on how many workers produce the blocks.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConditioningEventEmpty, DataError, EmptyDataset

CHUNK = 4096
N_CONTEXT = 10

NORMAL, LOGNORMAL, STUDENT_T = 1, 2, 3

# price, price^2 handled separately; the context coefficients follow.
DEFAULT_BETA = (200.0, -10.0, -0.2) + tuple(v / math.sqrt(10) for v in (-2, -1, 0, 1, 2, 0, 0, 0, 0, 0))
DEFAULT_GAMMA = (20.0, -2.1, 0.2) + tuple(v / math.sqrt(5) for v in (1, 1, 1, 1, 1, 0, 0, 0, 0, 0))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HistoricalDataset:
    """N samples ``(z1_i, x_i, y_i)``; row order is the sample identity."""

    z1: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        z1 = np.asarray(self.z1, dtype=float)
        if z1.ndim == 1:
            z1 = z1[:, None]
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = len(y)
        if n < 1:
            raise EmptyDataset("dataset has no samples")
        if z1.shape[0] != n or x.shape[0] != n:
            raise DataError(f"row counts differ: z1={z1.shape[0]}, x={x.shape[0]}, y={n}")
        for name, arr in (("z1", z1), ("x", x), ("y", y)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite entry in {name}")
        object.__setattr__(self, "z1", _frozen(z1))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d_z1(self) -> int:
        return self.z1.shape[1]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    def points(self) -> np.ndarray:
        """Joint ``(z1, x)`` coordinates, shape (n, d_z1 + d_x)."""
        return np.hstack([self.z1, self.x])

    def subset(self, idx) -> "HistoricalDataset":
        idx = np.asarray(idx, dtype=int)
        return HistoricalDataset(self.z1[idx], self.x[idx], self.y[idx])

    def __eq__(self, other):
        if not isinstance(other, HistoricalDataset):
            return NotImplemented
        return (
            np.array_equal(self.z1, other.z1)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )

    __hash__ = None


@dataclass(frozen=True)
class TrueModel:
    """Location-scale demand ground truth.

    ``beta`` = (b0, b1, b1', b2..b11) and ``gamma`` = (g0, g1, g2, g3..g12).
    ``clamp=False`` exists only so tests can compare against closed-form
    normal probabilities.
    """

    relationship_mode: int = 1
    uncertainty_mode: int = NORMAL
    beta: tuple = DEFAULT_BETA
    gamma: tuple = DEFAULT_GAMMA
    clamp: bool = True

    def __post_init__(self):
        if self.relationship_mode not in (1, 2):
            raise ValueError(f"relationship_mode must be 1 or 2, got {self.relationship_mode}")
        if self.uncertainty_mode not in (NORMAL, LOGNORMAL, STUDENT_T):
            raise ValueError(f"uncertainty_mode must be 1, 2 or 3, got {self.uncertainty_mode}")
        if len(self.beta) != 3 + N_CONTEXT or len(self.gamma) != 3 + N_CONTEXT:
            raise ValueError("beta and gamma must each have 13 entries")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))

    def location_scale(self, p, x):
        """Return (location, scale) before noise, broadcasting over rows."""
        p = np.asarray(p, dtype=float)
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != N_CONTEXT:
            raise DataError(f"context must have dimension {N_CONTEXT}, got {x.shape[-1]}")
        b, g = np.array(self.beta), np.array(self.gamma)
        loc = b[0] + b[1] * p + x @ b[3:]
        if self.relationship_mode == 2:
            loc = loc + b[2] * p**2
        scale = g[0] + g[1] * p + g[2] * p**2 + x @ g[3:]
        return loc, scale


@dataclass(frozen=True)
class McConfig:
    n_draws: int = 10**6
    seed: int = 0

    def __post_init__(self):
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")


_CORR = 0.5 ** np.abs(np.subtract.outer(np.arange(N_CONTEXT), np.arange(N_CONTEXT)))
_CHOL = np.linalg.cholesky(_CORR)


def context_covariance() -> np.ndarray:
    return _CORR.copy()


def _block_rng(seed, *key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), *key])))


def _draw_noise(rng: np.random.Generator, mode: int, m: int) -> np.ndarray:
    z = rng.standard_normal(m)
    if mode == NORMAL:
        return z
    if mode == LOGNORMAL:
        return np.exp(z)
    chi = rng.chisquare(3, m)
    return z / np.sqrt(chi / 3.0)


def _draw_contexts(rng: np.random.Generator, m: int) -> np.ndarray:
    return rng.standard_normal((m, N_CONTEXT)) @ _CHOL.T


def sample_context(model: TrueModel, rng_seed, size: int | None = None) -> np.ndarray:
    """Draw context vector(s) from N(0, 0.5^|i-j|)."""
    m = 1 if size is None else size
    out = np.concatenate(
        [_draw_contexts(_block_rng(rng_seed, 1, j), min(CHUNK, m - j * CHUNK)) for j in range(-(-m // CHUNK))]
    )
    return out[0] if size is None else out


def demand(model: TrueModel, p, x, u):
    """Demand under the model's relationship mode; negatives clamp to zero."""
    loc, scale = model.location_scale(p, x)
    u = np.asarray(u, dtype=float)
    if model.relationship_mode == 1:
        d = loc + scale * u
    else:
        g = model.gamma
        p = np.asarray(p, dtype=float)
        d = loc + (g[0] + g[1] * p) * np.minimum(u, 0.0) + g[2] * p**2 * np.maximum(u, 0.0)
    if model.clamp:
        d = np.maximum(d, 0.0)
    return d if np.ndim(d) else float(d)


def generate_dataset(model: TrueModel, n: int, price_grid, seed) -> HistoricalDataset:
    """Draw ``n`` samples: context, a price uniform over ``price_grid``, demand."""
    if n < 1:
        raise ValueError("n must be >= 1")
    grid = np.asarray(price_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("price_grid is empty")
    ps, xs, ys = [], [], []
    for j in range(-(-n // CHUNK)):
        m = min(CHUNK, n - j * CHUNK)
        rng = _block_rng(seed, 2, j)
        x = _draw_contexts(rng, m)
        p = grid[rng.integers(0, grid.size, m)]
        u = _draw_noise(rng, model.uncertainty_mode, m)
        ps.append(p)
        xs.append(x)
        ys.append(demand(model, p, x, u))
    return HistoricalDataset(np.concatenate(ps), np.concatenate(xs), np.concatenate(ys))


# --------------------------------------------------------------------------
# Monte Carlo oracle

def mc_noise(model: TrueModel, mc: McConfig) -> np.ndarray:
    m = mc.n_draws
    return np.concatenate(
        [_draw_noise(_block_rng(mc.seed, 3, j), model.uncertainty_mode, min(CHUNK * 16, m - j * CHUNK * 16))
         for j in range(-(-m // (CHUNK * 16)))]
    )


def mc_demand(model: TrueModel, p, x, mc: McConfig) -> np.ndarray:
    """Conditional demand draws at (p, x). Same seed gives common random numbers."""
    u = mc_noise(model, mc)
    x = np.broadcast_to(np.asarray(x, dtype=float), (len(u), N_CONTEXT))
    return demand(model, np.full(len(u), float(p)), x, u)


def _loss(p, q, d, c, s):
    return -(p - c) * q + (p - s) * np.maximum(q - d, 0.0)


def mc_probability(model, p, q, x, v, mc: McConfig, c=5.0, s=2.0, draws=None) -> float:
    """Estimate P(loss(p, q; D) <= -v | X = x)."""
    if q < 0:
        raise ValueError("q must be nonnegative")
    d = mc_demand(model, p, x, mc) if draws is None else draws
    return float(np.mean(_loss(p, q, d, c, s) <= -v))


def mc_expected_loss(model, p, q, x, mc: McConfig, c=5.0, s=2.0, draws=None) -> float:
    d = mc_demand(model, p, x, mc) if draws is None else draws
    return float(np.mean(_loss(p, q, d, c, s)))


def mc_cvar_loss(model, p, q, x, v, mc: McConfig, c=5.0, s=2.0, draws=None) -> float:
    """Estimate E[loss | loss <= -v], the realized loss given the target is met."""
    d = mc_demand(model, p, x, mc) if draws is None else draws
    l = _loss(p, q, d, c, s)
    hit = l <= -v
    if not hit.any():
        raise ConditioningEventEmpty(f"no draw reaches profit target {v} at p={p}, q={q}")
    return float(l[hit].mean())


def mc_mean_demand(model, p, x, mc: McConfig) -> float:
    return float(np.mean(mc_demand(model, p, x, mc)))


# --------------------------------------------------------------------------
# CSV

def _header(ds: HistoricalDataset):
    if ds.d_z1 == 1:
        z = ["p"]
    else:
        z = [f"z1_{i}" for i in range(ds.d_z1)]
    return z + [f"x{i}" for i in range(ds.d_x)] + ["d" if ds.d_z1 == 1 else "y"]


def save_csv(dataset: HistoricalDataset, path) -> None:
    rows = np.hstack([dataset.z1, dataset.x, dataset.y[:, None]])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(dataset))
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def load_csv(path) -> HistoricalDataset:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyDataset(f"{path}: no header")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise EmptyDataset(f"{path}: header only")
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    if not xcols or len(header) < len(xcols) + 2:
        raise DataError(f"{path}: unrecognised header {header}")
    try:
        arr = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if arr.shape[1] != len(header):
        raise DataError(f"{path}: ragged rows")
    return HistoricalDataset(arr[:, : xcols[0]], arr[:, xcols[0]: xcols[-1] + 1], arr[:, -1])
