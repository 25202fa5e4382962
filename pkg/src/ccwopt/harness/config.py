"""Experiment configuration and seed derivation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..weights import WeightKind, WeightSpec

# x coordinates shrunk so price dominates the neighborhood metric
PRICE_DOMINANT_SCALING = (1.0,) + (0.05,) * 10


def _default_weights():
    return [
        {"kind": "knn", "C": 0.5, "delta": 0.7, "scaling": list(PRICE_DOMINANT_SCALING)},
        {"kind": "lsa", "C": 3.0, "delta": 0.2, "scaling": list(PRICE_DOMINANT_SCALING)},
    ]


def _default_comparison_weights():
    return _default_weights() + [{"kind": "cart", "C": 0.5, "delta": 0.7}]


@dataclass
class ExperimentConfig:
    """All knobs of the three studies. JSON keys are the field names."""

    relationship_mode: int = 1
    uncertainty_mode: int = 1
    seed: int = 0
    out_dir: str = "results"
    threads: int = 1
    mc_draws: int = 100_000

    # sample efficiency
    n_schedule: list = field(default_factory=lambda: [1000, 10000, 100000])
    weights: list = field(default_factory=_default_weights)
    n_pairs: int = 20
    datasets_per_pair: int = 10
    gap_v: float = 0.0
    free_exponent: bool = False

    # comparison
    comparison_n: int = 10000
    comparison_weights: list = field(default_factory=_default_comparison_weights)
    baselines: list = field(default_factory=lambda: ["ols", "lasso"])
    targets: list = field(default_factory=lambda: [[0.0, 0.1]])
    repetitions: int = 10
    regenerate_dataset: bool = True

    # speed benchmark
    bench_schedule: list = field(default_factory=lambda: [1000, 5000, 10000])
    bench_target: list = field(default_factory=lambda: [100.0, 0.2])
    bench_weight: dict = field(default_factory=lambda: {"kind": "knn", "C": 0.5, "delta": 0.7})
    bench_trials: int = 3

    def __post_init__(self):
        try:
            self._validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def _validate(self):
        if self.relationship_mode not in (1, 2) or self.uncertainty_mode not in (1, 2, 3):
            raise ValueError("relationship_mode must be 1|2 and uncertainty_mode 1|2|3")
        for name in ("n_schedule", "weights", "comparison_weights", "targets", "bench_schedule"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be nonempty")
        for name in ("repetitions", "n_pairs", "datasets_per_pair", "bench_trials", "threads", "mc_draws"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if any(int(n) < 2 for n in list(self.n_schedule) + list(self.bench_schedule) + [self.comparison_n]):
            raise ValueError("dataset sizes must be >= 2")
        for v, a in self.targets:
            if not 0 < a < 1:
                raise ValueError(f"alpha {a} outside (0, 1)")
        if not 0 < self.bench_target[1] < 1:
            raise ValueError("bench alpha outside (0, 1)")
        unknown = set(self.baselines) - {"ols", "lasso"}
        if unknown:
            raise ValueError(f"unknown baselines {sorted(unknown)}")
        for group in (self.weights, self.comparison_weights):
            kinds = [WeightKind(w["kind"]).value for w in group]
            if len(set(kinds)) != len(kinds):
                raise ValueError("one weight spec per kind")
        self.weight_specs()
        self.comparison_specs()
        self.bench_spec()

    def weight_specs(self) -> list:
        return [WeightSpec.from_dict(w) for w in self.weights]

    def comparison_specs(self) -> list:
        return [WeightSpec.from_dict(w) for w in self.comparison_weights]

    def bench_spec(self) -> WeightSpec:
        return WeightSpec.from_dict(self.bench_weight)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def derive_seed(master: int, *key: int) -> int:
    """Independent 63-bit seed for the cell identified by ``key``."""
    ss = np.random.SeedSequence([int(master) & (2**64 - 1), *[int(k) for k in key]])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
