"""Input checks shared by the public estimator-style entry points.

Each helper either returns a normalized array or raises a typed error; the
``name`` argument keeps messages pointing at the caller's argument.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError


def as_float_matrix(value, name, allow_empty=False):
    """2-D float64 array with finite entries."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not allow_empty and arr.shape[0] == 0:
        raise ContractError(f"{name} must have at least one row")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite values")
    return arr


def as_label_vector(value, n_rows, name):
    """1-D int64 labels aligned with ``n_rows`` feature rows."""
    arr = np.asarray(value)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.shape[0] != n_rows:
        raise ShapeError(f"{name} has {arr.shape[0]} entries for {n_rows} rows")
    if arr.size and not np.all(arr == arr.astype(np.int64)):
        raise ContractError(f"{name} must contain integer class ids")
    return arr.astype(np.int64)


def check_matching_width(a, b, name_a, name_b):
    if a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"{name_a} has {a.shape[1]} columns but {name_b} has {b.shape[1]}"
        )
