"""Simulation toolkit for single-server queues fed by scheduled traffic."""

from .arrival import TrafficConfig, generate_traffic
from .distributions import PerturbationSpec, SeedSpec, ServiceSpec, negate
from .experiments import ExperimentConfig, run_experiment
from .workload import workload_path

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "PerturbationSpec",
    "SeedSpec",
    "ServiceSpec",
    "TrafficConfig",
    "generate_traffic",
    "negate",
    "run_experiment",
    "workload_path",
]
