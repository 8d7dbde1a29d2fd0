"""Config-driven experiment runner: validation, dispatch, stable outputs."""

from .config import ExperimentConfig, validate_config, ValidationIssue
from .runner import run_experiment, RunManifest

__all__ = [
    "ExperimentConfig",
    "validate_config",
    "ValidationIssue",
    "run_experiment",
    "RunManifest",
]
