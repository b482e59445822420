"""Error types.

Every failure the planner raises on purpose derives from ``PlannerError`` so the CLI can map
validation problems and solver infeasibility onto distinct exit codes.
"""

from typing import Iterable, List, Optional


class PlannerError(Exception):
    """Base class for planner errors."""


class ValidationError(PlannerError):
    """Input data or configuration is malformed."""


class ParseError(ValidationError):
    """A file could not be parsed."""

    def __init__(self, message: str, row: Optional[int] = None, path: Optional[str] = None) -> None:
        self.row = row
        self.path = path
        location = ""
        if path:
            location += f"{path}: "
        if row is not None:
            location += f"row {row}: "
        super().__init__(f"{location}{message}")


class DatasetValidationError(ValidationError):
    """A dataset violates one or more invariants."""

    def __init__(self, violations: Iterable[str]) -> None:
        self.violations: List[str] = list(violations)
        super().__init__("; ".join(self.violations))


class ValueNotInSupportError(ValidationError):
    """A conditioning value is not in the object's support."""


class InsufficientRangeError(ValidationError):
    """A requested shape or generator range does not fit."""


class EnumerationCapError(PlannerError):
    """Realization enumeration would exceed the configured cap."""

    def __init__(self, size: int, cap: int) -> None:
        self.size = size
        self.cap = cap
        super().__init__(f"enumeration of {size} realizations exceeds cap {cap}")


class NonDiscreteError(PlannerError):
    """An operation that enumerates was given a normal distribution."""


class MissingValueError(PlannerError):
    """An assignment does not cover every referenced object."""

    def __init__(self, ids: Iterable[str]) -> None:
        self.ids = list(ids)
        super().__init__(f"missing values for: {', '.join(self.ids)}")


class DependencyNotSupportedError(PlannerError):
    """Covariance-aware evaluation requested for a non-linear query."""


class IllPosedError(PlannerError):
    """The requested probability is undefined."""


class CurvatureUndefinedError(PlannerError):
    """No object has a positive curvature denominator."""


class SolverError(PlannerError):
    """A solver cannot produce a plan for this instance."""


class NonIntegerCostError(SolverError):
    """A dynamic program was given non-integer costs."""


class InstanceTooLargeError(SolverError):
    """Exhaustive search was requested on too many objects."""


class NonNormalDatasetError(SolverError):
    """A normal-only solver was given non-normal objects."""


class MissingCovarianceError(SolverError):
    """A dependency-aware solver was given no covariance."""


class NonLinearQueryError(SolverError):
    """A modular solver was given a query without a linear form."""
