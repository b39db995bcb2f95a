"""H-score and its shrinkage estimator.

``hscore_original`` is ``tr(pinv(S) S_z)``.  ``hscore_shrunk`` replaces ``S``
with ``(1 - a) S + a * sigma * I`` and ``S_z`` with ``(1 - a) S_z``, choosing
``a`` by Ledoit-Wolf unless given.  Two evaluation paths exist:

* dense (``n >= d``): one ``d x d`` Cholesky solve against ``R``;
* woodbury (``n < d``): everything is expressed through the ``n x n`` Gram
  matrix ``K = F F^T``.  With ``M`` the ``n x C`` matrix holding
  ``1/sqrt(n_c)`` at each sample's class, ``R = F^T M``, ``G = F R = K M``
  and ``||R||_F^2 = tr(M^T K M)``, so the cost is ``O(n^2 d)`` and no
  ``d x d`` matrix is ever formed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._rng import stream
from .covshrink import (
    CONSTANT_COLUMN_STD,
    _alpha_from_moments,
    as_class_indices,
    center_and_standardize,
    class_statistics,
)
from .errors import DegenerateInputError, NumericalError, ValidationError
from .projection import ProjectionSpec, gaussian_random_projection
from .synthgen import SyntheticPopulation

PINV_RCOND = 1e-10
SIGMA_SANITY_TOL = 1e-6


@dataclass(frozen=True)
class HScoreResult:
    value: float
    alpha_used: float | None
    path: str
    q_projected: int | None = None
    warnings: tuple[str, ...] = field(default=())

    def __float__(self) -> float:
        return self.value


def _check_inputs(F, y) -> tuple[np.ndarray, np.ndarray, int]:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2:
        raise ValidationError(f"feature matrix must be 2-D, got shape {F.shape}")
    codes, C = as_class_indices(y)
    if codes.size != F.shape[0]:
        raise ValidationError(f"{codes.size} labels for {F.shape[0]} samples")
    if F.shape[0] < 2:
        raise DegenerateInputError(f"need at least 2 samples, got {F.shape[0]}")
    if C < 2:
        raise DegenerateInputError(f"need at least 2 classes, got {C}")
    if not np.all(np.isfinite(F)):
        raise NumericalError("feature matrix contains non-finite values")
    return F, codes, C


def _indicator_weights(codes: np.ndarray, C: int) -> np.ndarray:
    counts = np.bincount(codes, minlength=C)
    M = np.zeros((codes.size, C))
    M[np.arange(codes.size), codes] = 1.0 / np.sqrt(counts[codes])
    return M


def _pinv_trace(F: np.ndarray, R: np.ndarray) -> float:
    """``tr(pinv(F^T F / n) R R^T / n)`` via the thin SVD of ``F``.

    Singular values of ``S`` are ``s^2 / n``; those at or below
    ``1e-10 * max`` are treated as zero, as a Moore-Penrose pseudo-inverse
    with that relative cutoff would.
    """
    try:
        _, s, vt = linalg.svd(F, full_matrices=False, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"SVD failed: {exc}") from exc
    eig = s * s
    if eig.size == 0 or eig[0] <= 0:
        return 0.0
    keep = eig > PINV_RCOND * eig[0]
    proj = (vt[keep] @ R) / s[keep, None]
    return float(np.sum(proj * proj))


def hscore_original(F, y) -> HScoreResult:
    """Pseudo-inverse H-score ``tr(pinv(S) S_z)`` on the column-centered features."""
    F, codes, C = _check_inputs(F, y)
    # the score is invariant to a global rescaling; unit max-abs keeps s**2 finite
    scale = np.max(np.abs(F))
    if scale > 0:
        F = F / scale
    Fc = F - F.mean(axis=0)
    R = class_statistics(Fc, codes).R
    value = _pinv_trace(Fc, R)
    if not np.isfinite(value):
        raise NumericalError("H-score is not finite")
    return HScoreResult(value=value, alpha_used=None, path="pseudoinverse")


def _dense_value(S: np.ndarray, R: np.ndarray, n: int, alpha: float, sigma: float) -> float:
    d = S.shape[0]
    shrunk = (1.0 - alpha) * S
    shrunk[np.diag_indices(d)] += alpha * sigma
    try:
        X = linalg.cho_solve(linalg.cho_factor(shrunk, lower=True, check_finite=False), R, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"shrunk covariance is not positive definite: {exc}") from exc
    return (1.0 - alpha) / n * float(np.sum(R * X))


def _woodbury_value(K: np.ndarray, M: np.ndarray, n: int, alpha: float, sigma: float) -> float:
    """Shrinkage H-score through the ``n x n`` system ``W = (1 - alpha) K + n alpha sigma I``.

    Expanding the inverse with the Woodbury identity gives
    ``(1 - alpha) / (n alpha sigma) * (||R||^2 - (1 - alpha) <G, W^-1 G>)``
    with ``G = K M``.  Because ``R = F^T M`` lies in the row space of ``F``
    the bracket simplifies to ``n alpha sigma <M, W^-1 G>``, which is what is
    evaluated: the two large terms of the expanded form cancel badly when
    ``alpha`` is small.
    """
    # K annihilates the ones vector, so centering M changes nothing exactly
    # and keeps rounding in K from being amplified along that direction
    M = M - M.mean(axis=0)
    G = K @ M
    W = (1.0 - alpha) * K
    W[np.diag_indices(n)] += n * alpha * sigma
    try:
        X = linalg.cho_solve(linalg.cho_factor(W, lower=True, check_finite=False), G, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Woodbury system is not positive definite: {exc}") from exc
    return (1.0 - alpha) * float(np.sum(M * X))


def hscore_shrunk(
    F,
    y,
    alpha: float | None = None,
    project_to: int | None = None,
    seed: int = 0,
    path: str = "auto",
) -> HScoreResult:
    """Shrinkage H-score.

    Parameters
    ----------
    F : array of shape (n, d)
        Raw target embeddings.  They are optionally projected to
        ``project_to`` dimensions, then z-normalized.
    y : array of shape (n,)
        Class labels (any hashable integers).
    alpha : float, optional
        Shrinkage intensity in [0, 1].  Ledoit-Wolf optimum when omitted.
    project_to : int, optional
        Gaussian random projection width; ``seed`` fixes the projection.
    path : {"auto", "dense", "woodbury"}
        ``auto`` takes the Woodbury path exactly when ``n < d``.  Forcing a
        path is meant for cross-checking the two.

    Returns
    -------
    HScoreResult
    """
    F, codes, C = _check_inputs(F, y)
    if path not in ("auto", "dense", "woodbury"):
        raise ValueError(f"unknown path {path!r}")
    if alpha is not None and not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    q = None
    if project_to is not None:
        F = gaussian_random_projection(F, ProjectionSpec(int(project_to), seed))
        q = int(project_to)

    F = center_and_standardize(F)
    n, d = F.shape
    notes: list[str] = []
    use_woodbury = (n < d) if path == "auto" else (path == "woodbury")

    row_sq = np.einsum("ij,ij->i", F, F)
    if use_woodbury:
        K = F @ F.T
        gram = K
    else:
        S = F.T @ F / n
        S = (S + S.T) / 2
        gram = S * n
    tr_s = float(row_sq.sum()) / n
    tr_s2 = float(np.sum(gram * gram)) / (n * n)
    sigma = tr_s / d
    if sigma <= 0:
        raise DegenerateInputError("all feature columns are constant")
    has_constant = bool(np.any(np.abs(F).max(axis=0) < CONSTANT_COLUMN_STD))
    if not has_constant and abs(sigma - 1.0) > SIGMA_SANITY_TOL:
        raise NumericalError(f"average variance {sigma} after standardization is not 1")

    if alpha is None:
        alpha = _alpha_from_moments(n, d, float(np.sum(row_sq * row_sq)), tr_s, tr_s2)
    alpha = float(alpha)

    if alpha == 0.0 and use_woodbury:
        msg = "alpha=0 makes the Woodbury system singular; fell back to the pseudo-inverse H-score"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        R = F.T @ _indicator_weights(codes, C)
        value = _pinv_trace(F, R)
        return HScoreResult(value=value, alpha_used=0.0, path="pseudoinverse", q_projected=q, warnings=(msg,))

    M = _indicator_weights(codes, C)
    if use_woodbury:
        value = _woodbury_value(K, M, n, alpha, sigma)
        taken = "woodbury"
    else:
        R = F.T @ M
        try:
            value = _dense_value(S, R, n, alpha, sigma)
        except NumericalError:
            if alpha != 0.0:
                raise
            msg = "alpha=0 with a singular covariance; fell back to the pseudo-inverse H-score"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            notes.append(msg)
            value = _pinv_trace(F, R)
            return HScoreResult(value=value, alpha_used=0.0, path="pseudoinverse", q_projected=q, warnings=tuple(notes))
        taken = "dense"
    if not np.isfinite(value):
        raise NumericalError("shrinkage H-score is not finite")
    return HScoreResult(value=value, alpha_used=alpha, path=taken, q_projected=q, warnings=tuple(notes))


def hscore_from_moments(gram: np.ndarray, col_sum: np.ndarray, class_sums: np.ndarray, class_counts: np.ndarray) -> float:
    """Pseudo-inverse H-score from accumulated raw moments.

    ``gram = sum_i f_i f_i^T``, ``col_sum = sum_i f_i`` and ``class_sums[c]``
    is the sum of the rows in class ``c``.  Lets the score be computed on
    samples too large to hold in memory.
    """
    n = float(class_counts.sum())
    mu = col_sum / n
    S = gram / n - np.outer(mu, mu)
    S = (S + S.T) / 2
    present = class_counts > 0
    R = ((class_sums[present] / class_counts[present, None] - mu) * np.sqrt(class_counts[present])[:, None]).T
    try:
        w, V = linalg.eigh(S, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    if w[-1] <= 0:
        return 0.0
    keep = w > PINV_RCOND * w[-1]
    proj = (V[:, keep].T @ R) / np.sqrt(w[keep])[:, None]
    return float(np.sum(proj * proj)) / n


def hscore_population_reference(spec, n_ref: int, chunk_size: int = 50_000) -> float:
    """Pseudo-inverse H-score on one large draw from the population behind ``spec``.

    The draw uses the ``"reference"`` stream of ``spec.seed``, so it is
    independent of the smaller samples the stability study compares it to.
    Moments are accumulated in blocks of ``chunk_size`` rows.
    """
    if n_ref < 10 * spec.d:
        raise DegenerateInputError(f"reference needs n_ref >= 10*d = {10 * spec.d}, got {n_ref}")
    population = SyntheticPopulation.from_spec(spec)
    d, C = population.d, population.n_classes
    gram = np.zeros((d, d))
    col_sum = np.zeros(d)
    class_sums = np.zeros((C, d))
    counts = np.zeros(C)
    for F, y in population.sample_chunks(n_ref, stream(spec.seed, "reference"), chunk_size):
        gram += F.T @ F
        col_sum += F.sum(axis=0)
        onehot = np.zeros((y.size, C))
        onehot[np.arange(y.size), y] = 1.0
        class_sums += onehot.T @ F
        counts += onehot.sum(axis=0)
    return hscore_from_moments(gram, col_sum, class_sums, counts)


def hscore_population_exact(spec) -> float:
    """Closed-form H-score of the population behind ``spec``.

    Classes are equally likely, so the between-class covariance is the
    covariance of the centroids and the feature covariance adds the shared
    within-class covariance.  Useful to judge how much the finite reference
    sample itself overstates the score.
    """
    population = SyntheticPopulation.from_spec(spec)
    k = population.d_informative
    mu = population.centroids - population.centroids.mean(axis=0)
    between = mu.T @ mu / population.n_classes
    within = np.eye(k) if population.mixing is None else population.mixing @ population.mixing.T
    # noise columns are independent of the labels and of the informative block, so they drop out
    solved = linalg.solve(within + between, between, assume_a="sym")
    return float(np.trace(solved))
