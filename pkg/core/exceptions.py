"""
Exception hierarchy for the GDA kernel toolkit.

Library code raises these; pipeline coordinators record them per cell and the
CLI maps them to exit codes (1 for scenario/usage problems, 2 for numerical failures).
"""

from typing import Any, Optional


class GdaKernelError(Exception):
    """Base class for every error raised by the toolkit."""


class DimensionMismatchError(GdaKernelError, ValueError):
    """Vectors or matrices do not share the kernel dimension."""

    def __init__(self, expected: int, got: int, what: str = "vector"):
        self.expected = expected
        self.got = got
        super().__init__(f"{what} has dimension {got}, expected {expected}")


class ScenarioError(GdaKernelError):
    """Scenario document could not be turned into a valid Scenario."""


class ScenarioParseError(ScenarioError):
    """The scenario text is not a well-formed document."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ScenarioValidationError(ScenarioError, ValueError):
    """A scenario field violates an invariant."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class SimulationDivergedError(GdaKernelError):
    """The simulated state left the finite / bounded region."""

    def __init__(self, message: str, step: int, record: Any = None):
        self.step = step
        self.record = record
        super().__init__(f"{message} at step {step}")


class LinearizationError(GdaKernelError, ValueError):
    """The closed-form linearization hypotheses do not hold for the region."""


class NonPositiveCoefficientError(GdaKernelError, ValueError):
    """The step-size bound needs a, b, c > 0."""

    def __init__(self, cause: str):
        self.cause = cause
        super().__init__(f"stability bound inapplicable: {cause}")


class EigenSolverError(GdaKernelError):
    """Dense eigenvalue computation failed."""


class RaggedGridError(GdaKernelError, ValueError):
    """Heatmap cells do not form a full rectangular grid."""
