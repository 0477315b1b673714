"""Multinomial naive Bayes with additive smoothing."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..dataset import TARGET_COLUMN, FlowTable, n_classes_of, target_of
from ..errors import ConfigError, DataError
from .base import ClassifierModel, register


@register("naive_bayes")
@dataclass(frozen=True)
class NaiveBayesModel(ClassifierModel):
    """Log class priors and per-class log feature probabilities.

    A class never seen in training has prior ``-inf`` and is never predicted.
    """

    feature_names: tuple[str, ...]
    n_classes: int
    log_priors: tuple[float, ...]
    log_likelihoods: tuple[tuple[float, ...], ...]
    smoothing: float = 1.0

    def log_posterior(self, X) -> np.ndarray:
        X = self._check(X)
        theta = np.asarray(self.log_likelihoods, dtype=np.float64).reshape(self.n_classes, -1)
        return X @ theta.T + np.asarray(self.log_priors)

    def _predict(self, X):
        return np.argmax(self.log_posterior(X), axis=1)

    def _payload(self):
        return {
            "log_priors": [None if math.isinf(p) else p for p in self.log_priors],
            "log_likelihoods": [list(row) for row in self.log_likelihoods],
            "smoothing": self.smoothing,
        }

    @classmethod
    def from_dict(cls, obj):
        priors = tuple(-math.inf if p is None else float(p) for p in obj["log_priors"])
        theta = tuple(tuple(float(v) for v in row) for row in obj["log_likelihoods"])
        return cls(tuple(obj["feature_names"]), int(obj["n_classes"]), priors, theta,
                   float(obj["smoothing"]))


def fit_naive_bayes(X: np.ndarray, y: np.ndarray, n_classes: int, smoothing: float = 1.0):
    """Return ``(log_priors, log_theta)`` arrays.

    ``theta[c, j] = (sum_{i in c} x_ij + a) / (sum_j sum_{i in c} x_ij + a * d)``.
    """
    if smoothing <= 0:
        raise ConfigError(f"smoothing must be positive, got {smoothing}")
    if len(X) == 0:
        raise DataError("cannot train on an empty table")
    if np.isnan(X).any() or (X < 0).any():
        raise DataError("multinomial naive Bayes needs non-negative, non-missing features")
    d = X.shape[1]
    class_rows = np.bincount(y, minlength=n_classes).astype(np.float64)
    with np.errstate(divide="ignore"):
        log_priors = np.log(class_rows) - math.log(len(y))
    sums = np.zeros((n_classes, d))
    np.add.at(sums, y, X)
    theta = (sums + smoothing) / (sums.sum(axis=1, keepdims=True) + smoothing * d)
    return log_priors, np.log(theta)


def train_naive_bayes(table: FlowTable, target: str = TARGET_COLUMN, smoothing: float = 1.0,
                      features: Sequence[str] | None = None) -> NaiveBayesModel:
    features = list(table.feature_names if features is None else features)
    X = table.feature_matrix(features)
    y = target_of(table, target)
    n_classes = n_classes_of(table, target)
    log_priors, log_theta = fit_naive_bayes(X, y, n_classes, smoothing)
    return NaiveBayesModel(
        tuple(features), n_classes, tuple(float(p) for p in log_priors),
        tuple(tuple(float(v) for v in row) for row in log_theta), float(smoothing),
    )
