"""Experiment drivers, residual baselines, plots and the CLI."""

from .baselines import ParametricModel, parametric_solve, train_residual_baseline
from .config import ExperimentConfig, derive_seed
from .experiments import fit_rate, fit_rate_free, run_comparison, run_sample_efficiency, run_speed_benchmark
from .plots import emit_plots
