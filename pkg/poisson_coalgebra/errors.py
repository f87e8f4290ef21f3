"""
Exception hierarchy for coalgebra construction, evaluation and auditing.
"""
from typing import Any, Optional, Sequence


class CoalgebraError(Exception):
    """Base exception for all package errors."""
    pass


class UnresolvedSymbol(CoalgebraError):
    """Raised when a parameter or placeholder cannot be resolved at evaluation."""

    def __init__(self, name: str, index: Optional[int] = None):
        self.name = name
        self.index = index
        label = name if index is None else f"{name}[{index + 1}]"
        super().__init__(f"Unresolved symbol: {label}")


class DomainError(CoalgebraError):
    """Raised when an intermediate value is non-finite or leaves its domain."""

    def __init__(self, message: str, point: Optional[Sequence[float]] = None, node: Any = None):
        self.point = None if point is None else [float(v) for v in point]
        self.node = node
        if self.point is not None:
            message = f"{message} at point {self.point}"
        super().__init__(message)


class LoopPole(DomainError):
    """Raised when a loop spectral parameter hits a pole (0 or epsilon)."""
    pass


class DimensionMismatch(CoalgebraError):
    """Raised when an expression targets coordinates outside the phase space."""
    pass


class UnknownGenerator(CoalgebraError):
    """Raised for a generator symbol the coalgebra does not define."""
    pass


class ParameterMismatch(CoalgebraError):
    """Raised when site parameters do not fit the coalgebra or the site count."""
    pass


class OddDimension(CoalgebraError):
    """Raised when l - r is odd, so no generic realization dimension exists."""
    pass


class EmptySamplingBox(CoalgebraError):
    """Raised when parameter values leave no admissible sampling region."""
    pass


class NonMetric(CoalgebraError):
    """Raised when a metric field is singular or not positive-definite."""
    pass


class NoConvergence(CoalgebraError):
    """Raised when the implicit midpoint solve fails to converge."""

    def __init__(self, message: str, state: Optional[Sequence[float]] = None, step: Optional[float] = None):
        self.state = None if state is None else [float(v) for v in state]
        self.step = step
        if step is not None:
            message = f"{message}; try a step smaller than {step:g}"
        super().__init__(message)


class UnknownSystem(CoalgebraError):
    """Raised for a catalog id that is not registered."""
    pass


class ConfigError(CoalgebraError):
    """Raised for invalid run configurations or expression strings."""
    pass
