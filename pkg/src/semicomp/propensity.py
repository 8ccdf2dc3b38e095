"""Logistic propensity model and inverse-probability weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import Dataset
from .errors import DesignError, PositivityError, UsageError

SEPARATION_EPS = 1e-8


@dataclass(frozen=True)
class PropensityModel:
    """``P(A=1 | X) = expit(coefficients[0] + X @ coefficients[1:])``."""

    coefficients: np.ndarray
    converged: bool = True
    iterations: int = 0
    covariate_names: tuple = ()

    def predict(self, covariates) -> np.ndarray:
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[None, :] if x.size == len(self.coefficients) - 1 else x[:, None]
        return expit(self.coefficients[0] + x @ self.coefficients[1:])

    def scores(self, dataset: Dataset) -> np.ndarray:
        return self.predict(dataset.covariates)


def _design(covariates):
    n = covariates.shape[0]
    return np.column_stack([np.ones(n), covariates])


def fit_logistic(dataset: Dataset, tol=1e-8, max_iter=100) -> PropensityModel:
    """Maximum-likelihood logistic regression of arm on covariates by IRLS.

    Iterates Newton steps until the largest absolute score component is below
    ``tol``. Raises :class:`DesignError` for a rank-deficient design and
    :class:`PositivityError` when a fitted probability ends outside
    ``[1e-8, 1 - 1e-8]`` (quasi-complete separation).
    """
    y = dataset.arm.astype(float)
    if y.min() == y.max():
        raise PositivityError("both arms must be present to fit a propensity model")
    X = _design(dataset.covariates)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DesignError("propensity design matrix is rank deficient")
    beta = np.zeros(X.shape[1])
    ybar = y.mean()
    beta[0] = np.log(ybar / (1 - ybar))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(X @ beta)
        score = X.T @ (y - p)
        if np.max(np.abs(score)) < tol:
            converged = True
            it -= 1
            break
        w = p * (1 - p)
        info = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise PositivityError("information matrix became singular (separation)") from None
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            raise PositivityError("coefficients diverged (separation)")
    p = expit(X @ beta)
    if np.any(p < SEPARATION_EPS) or np.any(p > 1 - SEPARATION_EPS):
        raise PositivityError(
            f"fitted propensities reach [{p.min():.3g}, {p.max():.3g}]; arm is (nearly) separated by covariates"
        )
    return PropensityModel(beta, converged, it, dataset.covariate_names)


def true_model(coefficients, covariate_names=()) -> PropensityModel:
    return PropensityModel(np.asarray(coefficients, dtype=float), True, 0, tuple(covariate_names))


def propensity_scores(dataset: Dataset, mode="fit", model: PropensityModel | None = None) -> np.ndarray:
    """``P(A=1 | X_i)`` per subject.

    ``mode`` is ``fit`` (logistic IRLS), ``true``/``supplied`` (use the
    probabilities carried by the dataset) or ``model`` (use ``model``).
    """
    if mode == "fit":
        return fit_logistic(dataset).scores(dataset)
    if mode in ("true", "supplied"):
        if dataset.propensity is None:
            raise UsageError(f"ps mode {mode!r} needs per-subject propensities on the dataset")
        return np.asarray(dataset.propensity, dtype=float)
    if mode == "model":
        if model is None:
            raise UsageError("ps mode 'model' needs a PropensityModel")
        return model.scores(dataset)
    raise UsageError(f"unknown propensity mode {mode!r}")


def weights_from_scores(arm, scores, a, cap=None) -> np.ndarray:
    """``w_i(a) = I(A_i = a) / P(A_i = a | X_i)``, optionally capped at ``cap``."""
    arm = np.asarray(arm)
    scores = np.asarray(scores, dtype=float)
    p_a = scores if a == 1 else 1.0 - scores
    w = np.where(arm == a, 1.0 / p_a, 0.0)
    if cap is not None:
        w = np.minimum(w, cap)
    return w


def ipw_weights(dataset: Dataset, model, a, cap=None) -> np.ndarray:
    """Inverse-probability weights for arm ``a``; ``model`` is a PropensityModel or score array."""
    scores = model.scores(dataset) if isinstance(model, PropensityModel) else np.asarray(model, dtype=float)
    return weights_from_scores(dataset.arm, scores, a, cap)


def arm_weights(dataset: Dataset, scores, cap=None) -> dict:
    return {a: weights_from_scores(dataset.arm, scores, a, cap) for a in (0, 1)}
