"""Doubly-robust mean and quantile dose-response curves with high-dimensional controls."""

from .bootstrap import MultiplierSpec, bootstrap_curves, modified_percentile_ci
from .data import Dataset, load_csv_dataset, write_csv_dataset
from .dose_response import Grids, default_grids, estimate_curves
from .kernels import TuningConfig, penalty_lambda, select_bandwidth
from .simulation import DgpConfig, StudyConfig, oracle_truth, run_mc_study, simulate_dgp

__all__ = [
    "Dataset", "DgpConfig", "Grids", "MultiplierSpec", "StudyConfig", "TuningConfig",
    "bootstrap_curves", "default_grids", "estimate_curves", "load_csv_dataset",
    "modified_percentile_ci", "oracle_truth", "penalty_lambda", "run_mc_study",
    "select_bandwidth", "simulate_dgp", "write_csv_dataset",
]
