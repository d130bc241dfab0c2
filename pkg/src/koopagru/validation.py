"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.utils import check_array

from .data_io import RawSeries
from .exceptions import DatasetDimensionError, DataQualityError, WindowingError


def check_series(X, n_features: Optional[int] = None, min_length: int = 1) -> np.ndarray:
    """Return ``X`` as a finite float64 ``(T, m)`` array.

    A 1-D input is treated as a single channel.
    """
    if isinstance(X, RawSeries):
        X = X.values
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[:, None]
    try:
        X = check_array(X, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=1)
    except ValueError as exc:
        raise DataQualityError(str(exc)) from exc
    if n_features is not None and X.shape[1] != n_features:
        raise DatasetDimensionError(f"expected {n_features} channels, got {X.shape[1]}")
    if X.shape[0] < min_length:
        raise WindowingError(f"series of length {X.shape[0]} is shorter than {min_length}")
    return X


def check_labels(y, length: int) -> np.ndarray:
    y = np.asarray(y).ravel()
    if y.shape[0] != length:
        raise DataQualityError(f"labels length {y.shape[0]} != series length {length}")
    if not np.isin(y, (0, 1)).all():
        raise DataQualityError("labels must be binary (0/1)")
    return y.astype(np.int64)


def check_percent(r: float) -> float:
    r = float(r)
    if not 0 < r < 100:
        raise ValueError(f"r must lie strictly between 0 and 100, got {r}")
    return r
