"""Input validation helpers used by the estimator-facing modules."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, KTooLargeError, NonFiniteError


def as_float_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array and reject non-finite entries."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionMismatchError(f"{name} must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or infinite entries")
    return arr


def check_same_dim(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[-1] != y.shape[-1] and x.shape[0] != y.shape[0]:
        raise DimensionMismatchError(
            f"dimension mismatch: {x.shape} vs {y.shape}"
        )


def check_k(k: int, limit: int, what: str = "scores") -> int:
    """Validate a top-k count against the candidate pool size."""
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise KTooLargeError(f"k must be an integer, got {k!r}")
    if k < 1:
        raise KTooLargeError(f"k must be >= 1, got {k}")
    if k > limit:
        raise KTooLargeError(f"k={k} exceeds the {limit} available {what}")
    return int(k)


def check_unit_interval(x: float, name: str) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")
    return x
