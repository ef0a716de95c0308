"""Error hierarchy shared by every numerical module and the CLI."""

from typing import Any, Optional


class CarnotError(Exception):
    """Base class for all errors raised by carnot_fbp."""

    pass


class InvalidArgumentError(CarnotError, ValueError):
    """Raised when an operation is called outside its preconditions."""

    pass


class ConfigError(CarnotError):
    """Raised when a run configuration cannot be parsed or validated."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SolverError(CarnotError):
    """
    Numerical failure. Carries whatever the solver had when it gave up so
    callers can dump it.
    """

    def __init__(self, message: str, report: Any = None, last_iterate: Any = None):
        super().__init__(message)
        self.report = report
        self.last_iterate = last_iterate
        self.stage: Optional[int] = None


class IterationLimitError(SolverError):
    """Raised when an iteration hits its cap before the tolerance."""

    pass


class StagnationError(SolverError):
    """Raised when a line search cannot find an acceptable step."""

    pass


class PositivityViolationError(SolverError):
    """Raised when a field that must stay positive loses positivity."""

    pass


class GeometryFailureError(SolverError):
    """Raised when the mountain-pass geometry is absent (lambda too small)."""

    pass


class NoSolutionError(SolverError):
    """Raised when a shooting bracket cannot be established."""

    pass


class VerificationError(CarnotError):
    """Raised when an invariant audit fails."""

    def __init__(self, message: str, failures: Optional[list] = None):
        super().__init__(message)
        self.failures = failures or []


def require(condition: bool, message: str) -> None:
    if not condition:
        raise InvalidArgumentError(message)


__all__ = [
    "CarnotError",
    "InvalidArgumentError",
    "ConfigError",
    "SolverError",
    "IterationLimitError",
    "StagnationError",
    "PositivityViolationError",
    "GeometryFailureError",
    "NoSolutionError",
    "VerificationError",
    "require",
]
