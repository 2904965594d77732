"""
ERROR HIERARCHY FOR THE SBR SETTLING SIMULATOR

Every error carries the process exit code the command-line surface returns
for it: 1 for configuration problems, 2 for numerical failures and 3 for
validation failures.
"""

from typing import Any, Dict, Optional


class SettlingError(Exception):
    """Base class of all simulator errors."""

    exit_code = 1


class ConfigurationError(SettlingError):
    """Invalid parameters, schedules or scenario files."""

    exit_code = 1


class ConstitutiveDomainError(ConfigurationError, ValueError):
    """A constitutive law was evaluated outside its domain."""


class NumericalError(SettlingError):
    """A numerical procedure failed."""

    exit_code = 2


class SingularSystemError(NumericalError):
    """A tridiagonal system hit a zero pivot."""


class StepError(NumericalError):
    """
    A time step could not be completed.

    The simulator annotates the error with the simulated time and the stage
    that was active before re-raising it.
    """

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = dict(details)
        self.t: Optional[float] = None
        self.stage_index: Optional[int] = None
        self.stage_name: Optional[str] = None

    def annotate(self, t: float, stage_index: int, stage_name: str) -> "StepError":
        self.t = t
        self.stage_index = stage_index
        self.stage_name = stage_name
        return self

    def __str__(self) -> str:
        text = self.message
        if self.t is not None:
            text += f" (t = {self.t:.3f} s, stage {self.stage_index}: {self.stage_name})"
        return text


class NewtonConvergenceError(StepError):
    """Newton-Raphson did not terminate within the iteration cap."""

    def __init__(self, message: str, iterations: int, residual_norm: float):
        super().__init__(message, iterations=iterations, residual_norm=residual_norm)
        self.iterations = iterations
        self.residual_norm = residual_norm


class InvariantViolation(StepError):
    """A state left the invariant region beyond the round-off slack."""

    exit_code = 3

    def __init__(self, message: str, report: Dict[str, float]):
        super().__init__(message, report=report)
        self.report = report


class ReportError(SettlingError):
    """Error metrics could not be evaluated for the given outputs."""

    exit_code = 3


class ValidationFailure(SettlingError):
    """A property suite found violations."""

    exit_code = 3

    def __init__(self, message: str, violations: Optional[Dict[str, int]] = None):
        super().__init__(message)
        self.violations = violations or {}
