"""Uncertainty-estimation-based robust control barrier function safety filters."""

from .barrier import GateViolation
from .config import ConfigError, load_scenario
from .estimator import EstimatorConfig
from .sim import FilterFailure, Metrics, SimTrace, compute_metrics, export_csv, run_scenario

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "EstimatorConfig",
    "FilterFailure",
    "GateViolation",
    "Metrics",
    "SimTrace",
    "compute_metrics",
    "export_csv",
    "load_scenario",
    "run_scenario",
]
