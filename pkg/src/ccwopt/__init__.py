"""Contextual cluster-weight approximation of chance-constrained programs
with decision-dependent uncertainty, and its price-setting newsvendor case."""

from .dataset import HistoricalDataset, McConfig, TrueModel, generate_dataset, load_csv, sample_context, save_csv
from .errors import CCWError
from .estimator import ChanceConstraintSpec, estimate_objective, estimate_probability, violation_budget
from .newsvendor import PSNPInstance, SlConstraint, Strategy, VarConstraint, solve_psnp
from .solver import CandidateGrid, CutMode, benders_solve, critical_scenario, solve_enumeration
from .weights import Cluster, WeightKind, WeightSpec, precompute_clusters, single_cluster

__version__ = "0.1.0"
