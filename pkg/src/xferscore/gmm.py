"""Diagonal-covariance Gaussian mixture fitted by EM."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConvergenceWarning, DegenerateInputError

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmModel:
    """Fitted mixture.

    ``loglik`` is the mean per-sample log-likelihood at the returned
    parameters; ``loglik_history`` holds the same quantity after every EM
    step, starting from the seeded initialization.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik: float
    loglik_history: np.ndarray
    n_iter: int
    converged: bool
    variance_floor: float

    @property
    def K(self) -> int:
        return self.weights.size

    def _component_loglik(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        prec = 1.0 / self.variances
        quad = (X * X) @ prec.T - 2.0 * X @ (self.means * prec).T + np.sum(self.means**2 * prec, axis=1)
        logdet = np.sum(np.log(self.variances), axis=1)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw - 0.5 * (quad + logdet + X.shape[1] * _LOG_2PI)

    def responsibilities(self, X) -> np.ndarray:
        L = self._component_loglik(X)
        return np.exp(L - logsumexp(L, axis=1, keepdims=True))

    def score(self, X) -> float:
        return float(np.mean(logsumexp(self._component_loglik(X), axis=1)))


def kmeans_plus_plus(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Seed ``K`` centers by D^2 sampling."""
    n = X.shape[0]
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[k] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[k]) ** 2, axis=1))
    return centers


def fit_gmm(
    X,
    K: int,
    rng: np.random.Generator,
    max_iter: int = 200,
    tol: float = 1e-6,
    floor_ratio: float = 1e-6,
) -> GmmModel:
    """EM for a ``K``-component diagonal GMM.

    Means are seeded by k-means++, weights start uniform and every variance
    starts at the per-feature data variance.  Variances are floored at
    ``floor_ratio`` times the mean feature variance, which keeps each
    M-step a constrained maximizer, so the log-likelihood never decreases.
    A component that loses all its mass keeps its previous parameters with
    weight zero.  Iteration stops when the mean log-likelihood changes by
    less than ``tol`` relative to its magnitude.
    """
    X = np.asarray(X, dtype=np.float64)
    n, q = X.shape
    if K < 1:
        raise DegenerateInputError(f"need at least one component, got {K}")
    if n < K:
        raise DegenerateInputError(f"{n} samples cannot support {K} components")

    feat_var = X.var(axis=0)
    floor = floor_ratio * max(float(feat_var.mean()), np.finfo(float).tiny)
    means = kmeans_plus_plus(X, K, rng)
    variances = np.tile(np.maximum(feat_var, floor), (K, 1))
    weights = np.full(K, 1.0 / K)

    model = GmmModel(weights, means, variances, np.nan, np.empty(0), 0, False, floor)
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        L = model._component_loglik(X)
        norm = logsumexp(L, axis=1, keepdims=True)
        ll = float(np.mean(norm))
        history.append(ll)
        if len(history) >= 2 and abs(history[-1] - history[-2]) <= tol * max(abs(history[-1]), 1.0):
            converged = True
            break
        resp = np.exp(L - norm)
        Nk = resp.sum(axis=0)
        alive = Nk > 1e-12 * n
        new_means = model.means.copy()
        new_vars = model.variances.copy()
        new_means[alive] = (resp[:, alive].T @ X) / Nk[alive, None]
        sq = resp[:, alive].T @ (X * X) / Nk[alive, None] - new_means[alive] ** 2
        new_vars[alive] = np.maximum(sq, floor)
        new_weights = np.where(alive, Nk, 0.0) / Nk[alive].sum()
        model = GmmModel(new_weights, new_means, new_vars, np.nan, np.empty(0), it, False, floor)
    else:
        history.append(model.score(X))
        warnings.warn(f"EM did not converge in {max_iter} iterations", ConvergenceWarning, stacklevel=2)

    return GmmModel(
        weights=model.weights,
        means=model.means,
        variances=model.variances,
        loglik=history[-1],
        loglik_history=np.asarray(history),
        n_iter=it,
        converged=converged,
        variance_floor=floor,
    )
