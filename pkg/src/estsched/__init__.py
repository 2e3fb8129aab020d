"""Preemptive single-server scheduling with estimated job sizes."""
from .engine import Simulator, run_simulation
from .gittins import ErrorModel, gittins_score, truncated_mean
from .metrics import RunResult, aggregate, replicate_until_converged
from .policies import POLICY_NAMES, Policy, get_policy, policy_catalog
from .workload import ScriptedWorkload, WorkloadSpec

__version__ = "0.1.0"

__all__ = [
    "ErrorModel", "POLICY_NAMES", "Policy", "RunResult", "ScriptedWorkload", "Simulator",
    "WorkloadSpec", "aggregate", "get_policy", "gittins_score", "policy_catalog",
    "replicate_until_converged", "run_simulation", "truncated_mean",
]
