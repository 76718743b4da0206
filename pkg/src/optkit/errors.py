"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: config/usage problems exit 1,
invariant violations exit 2, non-finite numerics exit 3.
"""

from __future__ import annotations


class OptkitError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(OptkitError, ValueError):
    """Two vectors with incompatible shapes were combined."""

    def __init__(self, dim_a: int, dim_b: int, op: str) -> None:
        super().__init__(f"{op}: incompatible dimensions {dim_a} and {dim_b}")
        self.dim_a = dim_a
        self.dim_b = dim_b


class DomainError(OptkitError, ValueError):
    """An entry fell outside an operation's domain (e.g. sqrt of a negative)."""

    def __init__(self, message: str, index: int) -> None:
        super().__init__(f"{message} (index {index})")
        self.index = index


class ConfigError(OptkitError, ValueError):
    """Invalid configuration file, key, value, or CLI usage."""


class NonFiniteGradientError(OptkitError, ArithmeticError):
    """A gradient evaluation produced NaN or Inf during optimization."""

    def __init__(self, step: int, coordinate: int) -> None:
        super().__init__(
            f"non-finite gradient at step {step}, coordinate {coordinate}"
        )
        self.step = step
        self.coordinate = coordinate


class InvariantViolationError(OptkitError):
    """A runtime invariant monitor detected a violated bound."""

    def __init__(self, step: int, detail: str) -> None:
        super().__init__(f"invariant violated at step {step}: {detail}")
        self.step = step
        self.detail = detail


class EmptyTrajectoryError(OptkitError, ValueError):
    """A metric was requested over an empty trajectory."""
