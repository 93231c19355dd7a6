"""Logistic-regression benchmark: unregularized, standardized inputs,
gradient descent with backtracking line search."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .gbt import sigmoid

logger = logging.getLogger(__name__)


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    means: np.ndarray
    stds: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        Z = (X - self.means) / self.stds
        return Z @ self.weights + self.bias

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogRegModel":
        return cls(np.array(d["weights"], float), float(d["bias"]),
                   np.array(d["means"], float), np.array(d["stds"], float), dict(d.get("meta", {})))


def mean_loss(theta: np.ndarray, Z: np.ndarray, y: np.ndarray) -> float:
    """Mean logistic loss with ``theta = [weights..., bias]``."""
    m = Z @ theta[:-1] + theta[-1]
    return float(np.mean(np.logaddexp(0.0, m) - y * m))


def loss_gradient(theta: np.ndarray, Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    r = sigmoid(Z @ theta[:-1] + theta[-1]) - y
    return np.append(Z.T @ r, r.sum()) / len(y)


def train_logreg(X, y, max_iters: int = 5000, tolerance: float = 1e-6,
                 step0: float = 1.0, shrink: float = 0.5, armijo: float = 1e-4) -> LogRegModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training requires a non-empty 2-D feature matrix")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    dead = stds == 0
    if dead.any():
        logger.warning("dropping %d zero-variance column(s): %s", int(dead.sum()),
                       np.flatnonzero(dead).tolist())
    stds = np.where(dead, 1.0, stds)
    Z = (X - means) / stds
    Z[:, dead] = 0.0

    theta = np.zeros(X.shape[1] + 1)
    loss = mean_loss(theta, Z, y)
    step = step0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        grad = loss_gradient(theta, Z, y)
        if np.max(np.abs(grad)) < tolerance:
            converged = True
            break
        gnorm2 = grad @ grad
        # grow the trial step a little each iteration, shrink until Armijo holds
        step = min(step * 2.0, 1e6)
        while True:
            cand = theta - step * grad
            cand_loss = mean_loss(cand, Z, y)
            if cand_loss <= loss - armijo * step * gnorm2:
                break
            step *= shrink
            if step < 1e-16:
                break
        if cand_loss > loss:
            break
        theta, loss = cand, cand_loss
    theta[:-1][dead] = 0.0
    meta = {"iterations": it, "final_step": step, "converged": converged,
            "final_loss": loss, "dropped_columns": np.flatnonzero(dead).tolist()}
    logger.info("logreg: %d iterations, loss %.6f, converged=%s", it, loss, converged)
    return LogRegModel(theta[:-1].copy(), float(theta[-1]), means, stds, meta)


def predict_logreg(model: LogRegModel, X) -> np.ndarray:
    return sigmoid(model.decision_function(X))


def save_logreg(model: LogRegModel, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model.to_dict()) + "\n", encoding="utf-8")
    return path


def load_logreg(path) -> LogRegModel:
    return LogRegModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class LogisticBaseline(ClassifierMixin, BaseEstimator):
    """sklearn-compatible wrapper around :func:`train_logreg`."""

    def __init__(self, max_iter=5000, tol=1e-6, threshold=0.5):
        self.max_iter = max_iter
        self.tol = tol
        self.threshold = threshold

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if not np.isin(np.unique(y), (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        self.classes_ = np.array([0, 1])
        self.model_ = train_logreg(X, y, max_iters=self.max_iter, tolerance=self.tol)
        self.n_features_in_ = X.shape[1]
        self.coef_ = (self.model_.weights / self.model_.stds)[None, :]
        self.intercept_ = np.array([self.model_.bias - self.coef_[0] @ self.model_.means])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision_function(check_array(X, dtype=float))

    def predict_proba(self, X):
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] >= self.threshold).astype(int)]
