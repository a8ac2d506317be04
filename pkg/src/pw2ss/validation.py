"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .errors import LengthMismatch


def check_is_fitted_attr(estimator, attr):
    if not hasattr(estimator, attr):
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")


def check_features(X, n_features=None):
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_binary_labels(y, n_samples):
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise LengthMismatch(f"got {y.shape[0] if y.ndim else 0} labels for {n_samples} samples")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.int64)


def check_rasters(X, grid):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1:] != (grid, grid, 2):
        raise ValueError(f"rasters must have shape (n, {grid}, {grid}, 2), got {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("rasters contain non-finite values")
    return X


def check_screens(X):
    """Accept one ScreenSentence or a sequence of them; always return a list."""
    from .gui_core import ScreenSentence

    if isinstance(X, ScreenSentence):
        return [X]
    screens = list(X)
    for s in screens:
        if not isinstance(s, ScreenSentence):
            raise TypeError(f"expected ScreenSentence, got {type(s).__name__}")
    return screens
