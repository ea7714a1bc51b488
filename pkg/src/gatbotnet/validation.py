"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DataError, DimensionError


def check_features(X, name: str = "X") -> np.ndarray:
    """Return ``X`` as a finite, 2-D float64 array."""
    if isinstance(X, np.ndarray) and X.dtype == np.float64 and X.ndim == 2:
        if not np.all(np.isfinite(X)):
            raise DataError(f"{name} contains NaN or infinite values")
        return X
    try:
        return check_array(X, dtype=np.float64, ensure_all_finite=True, input_name=name)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def check_labels(y, n_rows: int | None = None, n_classes: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise DimensionError(f"labels must be 1-D, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("labels must be integer class indices")
    y = y.astype(np.int64)
    if n_rows is not None and y.shape[0] != n_rows:
        raise DimensionError(f"{y.shape[0]} labels for {n_rows} rows")
    if n_classes is not None and y.size and (y.min() < 0 or y.max() >= n_classes):
        raise DataError(f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]")
    return y


def check_index(ids, size: int, name: str = "node ids") -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).ravel()
    if ids.size and (ids.min() < 0 or ids.max() >= size):
        raise IndexError(f"{name} out of range for {size} nodes")
    return ids
