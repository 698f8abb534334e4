"""Federated learning simulator with an RL-driven data-selecting client."""

from .orchestrator import ExperimentConfig, RunResult, run_federated

__all__ = ["ExperimentConfig", "RunResult", "run_federated"]
__version__ = "0.1.0"
