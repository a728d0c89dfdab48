"""Input validation helpers used by the estimator-style API.

These mirror the conventions of scikit-learn's `check_array` /
`check_is_fitted` but stay deliberately small: 2-D float matrices in,
informative errors out.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, TrainingError


def as_matrix(x, name: str = "X", *, n_cols: int | None = None, dtype=None) -> np.ndarray:
    """Coerce `x` to a 2-D float ndarray and check its column count.

    Raises DimensionError naming the offending dimension. Rejects
    non-finite entries.
    """
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise DimensionError(
            f"{name} has {arr.shape[1]} columns, expected {n_cols}"
        )
    if not np.isfinite(arr).all():
        raise DimensionError(f"{name} contains non-finite entries")
    return arr


def check_consistent_rows(*pairs) -> None:
    """`pairs` are (array, name); all arrays must share their first dimension."""
    sizes = {name: np.asarray(a).shape[0] for a, name in pairs}
    if len(set(sizes.values())) > 1:
        raise DimensionError(f"inconsistent row counts: {sizes}")


def check_is_fitted(estimator, attr: str) -> None:
    if getattr(estimator, attr, None) is None:
        raise TrainingError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )
