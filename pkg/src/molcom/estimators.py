"""scikit-learn compatible wrappers around the fitter and trace preprocessing.

``VerticalChannelRegressor`` takes sample times as a single feature column
and the observed signal as the target, so it drops into pipelines, grid
searches and ``clone``. The transformers work row-wise on a 2-D array whose
rows are traces sampled on a shared grid.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .channel_models import peak_time, vertical_response
from .fitting import FitConfig, fit_arrays

__all__ = ["VerticalChannelRegressor", "PeakNormalizer", "BaselineSubtractor"]


def _times(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


class VerticalChannelRegressor(RegressorMixin, BaseEstimator):
    """Least-squares estimate of the vertical channel coefficients.

    Parameters
    ----------
    distance : float
        Fixed transmitter-receiver separation used by the model.
    initial_guess : tuple of 3 floats or None
        Starting ``(a, b, e)``; ``None`` derives one from the observed peak.
    max_iterations, cost_tolerance, step_tolerance, initial_damping,
    damping_up_factor, damping_down_factor :
        Forwarded to :class:`~molcom.fitting.FitConfig`.

    Attributes
    ----------
    coef_ : ndarray of shape (3,)
        Fitted ``(a, b, e)``.
    params_ : VerticalChannelParams
    fit_result_ : FitResult
    n_iter_ : int
    """

    def __init__(
        self,
        distance=0.1,
        initial_guess=None,
        max_iterations=200,
        cost_tolerance=1e-10,
        step_tolerance=1e-10,
        initial_damping=1e-3,
        damping_up_factor=10.0,
        damping_down_factor=0.1,
    ):
        self.distance = distance
        self.initial_guess = initial_guess
        self.max_iterations = max_iterations
        self.cost_tolerance = cost_tolerance
        self.step_tolerance = step_tolerance
        self.initial_damping = initial_damping
        self.damping_up_factor = damping_up_factor
        self.damping_down_factor = damping_down_factor

    def _config(self):
        return FitConfig(
            initial_guess=None if self.initial_guess is None else tuple(self.initial_guess),
            max_iterations=self.max_iterations,
            cost_tolerance=self.cost_tolerance,
            step_tolerance=self.step_tolerance,
            initial_damping=self.initial_damping,
            damping_up_factor=self.damping_up_factor,
            damping_down_factor=self.damping_down_factor,
        )

    def fit(self, X, y):
        X, y = check_X_y(_times(X), y, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError(f"expected a single time column, got {X.shape[1]} features")
        self.n_features_in_ = 1
        self.fit_result_ = fit_arrays(X[:, 0], y, self.distance, self._config())
        self.params_ = self.fit_result_.params
        self.coef_ = self.params_.coefficients
        self.n_iter_ = self.fit_result_.iterations
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(_times(X))
        if X.shape[1] != 1:
            raise ValueError(f"expected a single time column, got {X.shape[1]} features")
        return vertical_response(self.params_, X[:, 0])

    @property
    def peak_time_(self):
        check_is_fitted(self, "params_")
        return peak_time(self.params_)


class PeakNormalizer(TransformerMixin, BaseEstimator):
    """Divide each row by its maximum. Stateless."""

    def fit(self, X, y=None):
        check_array(X)
        return self

    def transform(self, X):
        X = check_array(X, copy=True)
        peak = X.max(axis=1, keepdims=True)
        if np.any(peak <= 0):
            raise ValueError("every row needs a positive maximum to be peak-normalized")
        return X / peak


class BaselineSubtractor(TransformerMixin, BaseEstimator):
    """Remove a constant offset from each row.

    With ``baseline=None`` the offset is the mean of the first ``n_samples``
    columns of that row, i.e. the resting reading before the pulse arrives.
    """

    def __init__(self, n_samples=5, baseline=None):
        self.n_samples = n_samples
        self.baseline = baseline

    def fit(self, X, y=None):
        X = check_array(X)
        if self.baseline is None and X.shape[1] < self.n_samples:
            raise ValueError(f"rows have {X.shape[1]} samples, fewer than n_samples={self.n_samples}")
        return self

    def transform(self, X):
        X = check_array(X, copy=True)
        if self.baseline is not None:
            return X - self.baseline
        return X - X[:, : self.n_samples].mean(axis=1, keepdims=True)

