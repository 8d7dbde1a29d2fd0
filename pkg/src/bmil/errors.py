"""Error types shared across modules, mapped to CLI exit codes by the runner."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration or parameter range (exit code 2)."""


class ExtinctionError(RuntimeError):
    """A splitting level lost every replica (exit code 3)."""


class InfeasibleError(RuntimeError):
    """Requested estimate is out of reach (e.g. accept rate too small; exit 4)."""

    def __init__(self, message: str, detail: dict | None = None):
        super().__init__(message)
        self.detail = detail or {}


class SimulationFault(RuntimeError):
    """Non-finite state or internal inconsistency during simulation (exit 5)."""


class RefinementNeeded(ValueError):
    """Sample spacing too coarse for the requested kernel radius.

    Carries the maximal admissible time step so the caller can refine.
    """

    def __init__(self, message: str, max_dt: float):
        super().__init__(message)
        self.max_dt = max_dt
