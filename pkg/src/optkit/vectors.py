"""Dense float64 vector arithmetic shared by every other module.

All operations are pure: inputs are never mutated and results are returned
as fresh read-only arrays. Norm and dot reductions accumulate sequentially
left-to-right (no pairwise or parallel reduction) so that repeated runs on
the same platform are bit-identical.
"""

from __future__ import annotations

import math
from typing import Iterable, TypeAlias

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionMismatchError, DomainError

ParamVector: TypeAlias = NDArray[np.float64]

__all__ = [
    "ParamVector",
    "as_param_vector",
    "zeros",
    "filled",
    "hadamard",
    "elementwise_sqrt",
    "elementwise_max",
    "reciprocal",
    "l2_norm",
    "l1_norm",
    "dot",
    "axpy",
    "scale",
    "add",
    "subtract",
    "first_nonfinite_index",
]


def _own(values: np.ndarray) -> ParamVector:
    """Freeze a freshly allocated array and hand it out."""
    values.setflags(write=False)
    return values


def _check_dims(a: ParamVector, b: ParamVector, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(a.shape[0], b.shape[0], op)


def as_param_vector(values: Iterable[float] | np.ndarray) -> ParamVector:
    """Validate and copy `values` into a read-only float64 vector.

    Raises:
        ValueError: if the input is not 1-dimensional or is empty.
        DomainError: if any entry is NaN or Inf.
    """
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got ndim={arr.ndim}")
    if arr.shape[0] < 1:
        raise ValueError("vector dimension must be >= 1")
    bad = first_nonfinite_index(arr)
    if bad is not None:
        raise DomainError("non-finite entry in vector", bad)
    return _own(arr)


def zeros(dim: int) -> ParamVector:
    return _own(np.zeros(dim, dtype=np.float64))


def filled(dim: int, value: float) -> ParamVector:
    return _own(np.full(dim, float(value), dtype=np.float64))


def hadamard(a: ParamVector, b: ParamVector) -> ParamVector:
    """Componentwise product a[j]*b[j]."""
    _check_dims(a, b, "hadamard")
    return _own(a * b)


def elementwise_sqrt(a: ParamVector) -> ParamVector:
    """Componentwise square root; rejects negative entries by index."""
    for j, value in enumerate(a.tolist()):
        if value < 0.0:
            raise DomainError(f"sqrt of negative entry {value!r}", j)
    return _own(np.sqrt(a))


def elementwise_max(a: ParamVector, b: ParamVector) -> ParamVector:
    """Componentwise maximum; ties keep the common value."""
    _check_dims(a, b, "elementwise_max")
    return _own(np.maximum(a, b))


def reciprocal(a: ParamVector) -> ParamVector:
    """Componentwise 1/a[j]."""
    return _own(np.divide(1.0, a))


def l2_norm(a: ParamVector) -> float:
    # Sequential accumulation: bit-reproducibility over speed.
    acc = 0.0
    for value in a.tolist():
        acc += value * value
    return math.sqrt(acc)


def l1_norm(a: ParamVector) -> float:
    acc = 0.0
    for value in a.tolist():
        acc += abs(value)
    return acc


def dot(a: ParamVector, b: ParamVector) -> float:
    _check_dims(a, b, "dot")
    acc = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        acc += x * y
    return acc


def axpy(alpha: float, a: ParamVector, b: ParamVector) -> ParamVector:
    """alpha*a + b."""
    _check_dims(a, b, "axpy")
    return _own(alpha * a + b)


def scale(alpha: float, a: ParamVector) -> ParamVector:
    return _own(alpha * a)


def add(a: ParamVector, b: ParamVector) -> ParamVector:
    _check_dims(a, b, "add")
    return _own(a + b)


def subtract(a: ParamVector, b: ParamVector) -> ParamVector:
    """a - b."""
    _check_dims(a, b, "subtract")
    return _own(a - b)


def first_nonfinite_index(a: np.ndarray) -> int | None:
    """Index of the first NaN/Inf entry, or None if all entries are finite."""
    finite = np.isfinite(a)
    if finite.all():
        return None
    return int(np.argmin(finite))
