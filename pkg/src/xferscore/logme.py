"""LogME: log marginal evidence of the labels under a Bayesian linear head.

For each class ``c`` the target is the one-vs-rest indicator
``t = 1[y == c]`` and the model is ``t ~ N(F w, 1/beta)``,
``w ~ N(0, I/alpha)``.  The prior and noise precisions are tuned by
MacKay's fixed-point updates, all expressed through one shared spectral
decomposition of ``F``:

* ``n <= d``: thin SVD of ``F``;
* ``n > d``: symmetric eigendecomposition of ``F^T F``.

The log evidence counts every one of the ``d`` prior directions, including
those with zero singular value, so padding ``F`` with zero columns leaves
it unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .covshrink import as_class_indices
from .errors import DegenerateInputError, NumericalError, ValidationError

MAX_ITER = 100
REL_TOL = 1e-3
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class LogMEResult:
    """``value`` is the class-averaged log evidence per sample.

    ``evidence_history[c]`` holds the per-sample evidence of class ``c``
    after every fixed-point step (the first entry is at the initial
    ``alpha = beta = 1``).
    """

    value: float
    iterations_per_class: tuple[int, ...]
    converged: bool
    evidence_per_class: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    evidence_history: tuple[np.ndarray, ...]

    def __float__(self) -> float:
        return self.value


def _spectrum(F: np.ndarray) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Return ``(sigma, U, V)`` with ``sigma`` the nonzero eigenvalues of ``F^T F``.

    Exactly one of ``U`` (left singular vectors) and ``V`` (right) is set.
    """
    n, d = F.shape
    try:
        if n <= d:
            U, s, _ = linalg.svd(F, full_matrices=False, check_finite=False)
            with np.errstate(over="ignore"):
                sigma = s * s
            if not np.all(np.isfinite(sigma)):
                raise NumericalError("squared singular values overflow")
            top = sigma[0] if sigma.size else 0.0
            keep = sigma > top * max(n, d) * np.finfo(float).eps
            return sigma[keep], U[:, keep], None
        with np.errstate(over="ignore", invalid="ignore"):
            gram = F.T @ F
        if not np.all(np.isfinite(gram)):
            raise NumericalError("Gram matrix F^T F overflows")
        w, V = linalg.eigh(gram, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"spectral decomposition failed: {exc}") from exc
    w = w[::-1]
    V = V[:, ::-1]
    top = w[0] if w.size else 0.0
    keep = w > top * max(n, d) * np.finfo(float).eps
    return w[keep], None, V[:, keep]


def _evidence(alpha, beta, sigma, x2, res_x2, n, d):
    """Per-sample log evidence and the fixed-point statistics at ``(alpha, beta)``."""
    t = alpha / beta
    inv = 1.0 / (sigma[:, None] + t)
    gamma = np.sum(sigma[:, None] * inv, axis=0)
    m2 = np.sum(sigma[:, None] * (x2 * inv) * inv, axis=0)
    res2 = np.sum(x2 * (t * inv) ** 2, axis=0) + res_x2
    k = sigma.size
    logdet = np.sum(np.log(alpha + beta * sigma[:, None]), axis=0) + (d - k) * np.log(alpha)
    ev = 0.5 * (d * np.log(alpha) + n * np.log(beta) - logdet - beta * res2 - alpha * m2 - n * _LOG_2PI)
    return ev / n, gamma, m2, res2


def logme(F, y, max_iter: int = MAX_ITER, tol: float = REL_TOL) -> LogMEResult:
    """LogME score of features ``F`` for labels ``y``.

    Iteration for a class stops once both ``alpha`` and ``beta`` change by
    less than ``tol`` relative, or after ``max_iter`` updates.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2:
        raise ValidationError(f"feature matrix must be 2-D, got shape {F.shape}")
    codes, C = as_class_indices(y)
    if codes.size != F.shape[0]:
        raise ValidationError(f"{codes.size} labels for {F.shape[0]} samples")
    n, d = F.shape
    if n < 2:
        raise DegenerateInputError(f"need at least 2 samples, got {n}")
    if C < 2:
        raise DegenerateInputError(f"need at least 2 classes, got {C}")
    if not np.all(np.isfinite(F)):
        raise NumericalError("feature matrix contains non-finite values")

    T = np.zeros((n, C))
    T[np.arange(n), codes] = 1.0
    sigma, U, V = _spectrum(F)
    if sigma.size == 0:
        raise DegenerateInputError("feature matrix is identically zero")
    if U is not None:
        X = U.T @ T
    else:
        X = (V.T @ (F.T @ T)) / np.sqrt(sigma)[:, None]
    x2 = X * X
    # squared norm of each target outside the column space of F
    res_x2 = np.maximum(np.sum(T * T, axis=0) - np.sum(x2, axis=0), 0.0)

    alpha = np.ones(C)
    beta = np.ones(C)
    active = np.ones(C, dtype=bool)
    iters = np.zeros(C, dtype=int)
    ev, gamma, m2, res2 = _evidence(alpha, beta, sigma, x2, res_x2, n, d)
    history: list[list[float]] = [[float(v)] for v in ev]
    for _ in range(max_iter):
        if not active.any():
            break
        a = np.flatnonzero(active)
        new_alpha = gamma[a] / np.maximum(m2[a], np.finfo(float).tiny)
        new_beta = (n - gamma[a]) / np.maximum(res2[a], np.finfo(float).tiny)
        done = (np.abs(new_alpha - alpha[a]) <= tol * alpha[a]) & (np.abs(new_beta - beta[a]) <= tol * beta[a])
        alpha[a] = new_alpha
        beta[a] = new_beta
        iters[a] += 1
        ev_a, gamma_a, m2_a, res2_a = _evidence(alpha[a], beta[a], sigma, x2[:, a], res_x2[a], n, d)
        ev[a], gamma[a], m2[a], res2[a] = ev_a, gamma_a, m2_a, res2_a
        for j, c in enumerate(a):
            history[c].append(float(ev_a[j]))
        active[a[done]] = False

    if not np.all(np.isfinite(ev)):
        raise NumericalError("LogME evidence is not finite")
    return LogMEResult(
        value=float(np.mean(ev)),
        iterations_per_class=tuple(int(i) for i in iters),
        converged=not active.any(),
        evidence_per_class=ev.copy(),
        alpha=alpha,
        beta=beta,
        evidence_history=tuple(np.asarray(h) for h in history),
    )
