"""Federated sketched contextual linear bandits with FedLinUCB and Random baselines."""
from .agent import BanditParams, FSCLBAgent, compute_beta
from .baselines import FedLinAgent, FedLinServer, RandomAgent
from .config import ExperimentConfig, load_config
from .harness import aggregate_trials, invariant_suite, run_trial
from .kernels import BACKEND
from .server import FSCLBServer
from .sketch import SketchState, scfd_append, scfd_merge

__all__ = [
    "BACKEND", "BanditParams", "ExperimentConfig", "FSCLBAgent", "FSCLBServer", "FedLinAgent",
    "FedLinServer", "RandomAgent", "SketchState", "aggregate_trials", "compute_beta",
    "invariant_suite", "load_config", "run_trial", "scfd_append", "scfd_merge",
]
__version__ = "0.1.0"
