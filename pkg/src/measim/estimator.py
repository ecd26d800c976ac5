"""Scikit-learn adapter for the culture digit classifier.

Wraps culture generation, teacher-driven training, and spike-count readout in
the standard fit/predict estimator API so the simulated classifier drops into
pipelines, cross-validation, and parameter searches.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .config import SimParams, require_valid, scaled
from .culture import generate
from .protocols import classify, output_groups, train_digits
from .stimuli import DigitImage


def _as_digit_images(X, y=None) -> list[DigitImage]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3 and X.shape[1:] == (6, 6):
        flat = X.reshape(len(X), 36)
    else:
        flat = check_array(X, dtype=np.float64)
        if flat.shape[1] != 36:
            raise ValueError(f"expected 36 features (6x6 pixels), got {flat.shape[1]}")
    labels = y if y is not None else np.zeros(len(flat), dtype=int)
    return [DigitImage(pixels=row.reshape(6, 6), label=int(lbl))
            for row, lbl in zip(flat, labels)]


class CultureDigitClassifier(ClassifierMixin, BaseEstimator):
    """Binary 0/1 digit classifier backed by a simulated neuronal culture.

    Parameters
    ----------
    params : SimParams or None
        Simulation parameters; defaults to the calibrated parameter set.
    scale : float
        Size factor applied to the neuron count and in-degree targets.
    seed : int or None
        Overrides the culture seed when given.

    Attributes
    ----------
    culture_ : the trained culture (weights adapted by plasticity).
    classes_ : array([0, 1]).
    """

    def __init__(self, params: SimParams | None = None, scale: float = 1.0,
                 seed: int | None = None):
        self.params = params
        self.scale = scale
        self.seed = seed

    def _resolved_params(self) -> SimParams:
        params = self.params if self.params is not None else SimParams()
        if self.scale != 1.0:
            params = scaled(params, self.scale)
        if self.seed is not None:
            params = replace(params, seed=int(self.seed))
        return require_valid(params)

    def fit(self, X, y):
        X, y = check_X_y(np.asarray(X, dtype=np.float64).reshape(len(X), -1), y)
        y = np.asarray(y, dtype=int)
        if not set(np.unique(y)) <= {0, 1}:
            raise ValueError("labels must be 0 or 1")
        params = self._resolved_params()
        self.culture_ = generate(params)
        train_digits(self.culture_, params, _as_digit_images(X, y))
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = 36
        return self

    def predict(self, X):
        check_is_fitted(self, "culture_")
        groups = output_groups(self.culture_)
        params = self.culture_.params
        images = _as_digit_images(np.asarray(X, dtype=np.float64).reshape(len(X), -1))
        return np.array([classify(self.culture_, params, img, groups=groups).predicted
                         for img in images])

    def decision_counts(self, X):
        """Raw spike counts per output group, shape (n_samples, 2)."""
        check_is_fitted(self, "culture_")
        groups = output_groups(self.culture_)
        params = self.culture_.params
        images = _as_digit_images(np.asarray(X, dtype=np.float64).reshape(len(X), -1))
        return np.array([classify(self.culture_, params, img, groups=groups).counts
                         for img in images])
