"""Label-entropy based transferability scores: NCE, LEEP, NLEEP and their normalized forms.

All logarithms are natural.  The normalized form of a score ``X`` is
``1 + X / H(Y)``, which maps NCE onto ``[0, 1]`` because
``0 <= -NCE = H(Y|Z) <= H(Y)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._rng import stream
from .covshrink import as_class_indices, center_and_standardize
from .errors import DegenerateInputError, ValidationError
from .gmm import GmmModel, fit_gmm
from .matrixio import LabelVector
from .projection import ProjectionSpec, gaussian_random_projection

LOG_CLAMP = 1e-12
NLEEP_MAX_DIM = 64

__all__ = [
    "EmpiricalJoint",
    "GmmModel",
    "label_entropy",
    "pseudo_labels",
    "empirical_joint",
    "nce",
    "leep",
    "nleep",
    "normalize_metric",
]


def _labels(y) -> np.ndarray:
    if isinstance(y, LabelVector):
        return y.labels
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValidationError(f"labels must be 1-D, got shape {y.shape}")
    return y


@dataclass(frozen=True)
class EmpiricalJoint:
    """Plug-in joint distribution; rows index the pseudo-label ``z``, columns the label ``y``."""

    joint: np.ndarray
    marginal_z: np.ndarray

    def conditional_y_given_z(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.marginal_z[:, None] > 0, self.joint / self.marginal_z[:, None], 0.0)


def label_entropy(y) -> float:
    """Plug-in entropy of the label distribution in nats."""
    codes, C = as_class_indices(_labels(y))
    if codes.size == 0:
        raise DegenerateInputError("entropy of an empty label vector")
    p = np.bincount(codes, minlength=C) / codes.size
    p = p[p > 0]
    return float(-np.sum(p * np.log(p))) if p.size > 1 else 0.0


def pseudo_labels(theta) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest column."""
    theta = np.asarray(theta, dtype=np.float64)
    return np.argmax(theta, axis=1)


def empirical_joint(y, z) -> EmpiricalJoint:
    y_codes, C = as_class_indices(_labels(y))
    z_codes, Cs = as_class_indices(_labels(z))
    if y_codes.size != z_codes.size:
        raise ValidationError(f"{y_codes.size} labels but {z_codes.size} pseudo-labels")
    counts = np.zeros((Cs, C))
    np.add.at(counts, (z_codes, y_codes), 1.0)
    joint = counts / y_codes.size
    return EmpiricalJoint(joint=joint, marginal_z=joint.sum(axis=1))


def nce(y, z) -> float:
    """Negative conditional entropy ``-H(Y|Z)`` of labels given pseudo-labels."""
    J = empirical_joint(y, z)
    cond = J.conditional_y_given_z()
    mask = J.joint > 0
    return float(np.sum(J.joint[mask] * np.log(cond[mask])))


def leep(y, theta) -> float:
    """Log expected empirical prediction.

    ``theta`` is an ``n x C_s`` matrix of source-class probabilities.  The
    empirical predictor is ``P(y|z) = sum_i theta_i[z] 1[y_i = y] / sum_i theta_i[z]``
    and the score is the mean of ``log sum_z P(y_i|z) theta_i[z]``, with the
    inner value clamped at 1e-12.  Source classes that receive no mass are
    dropped with a warning.
    """
    y_codes, C = as_class_indices(_labels(y))
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 2 or theta.shape[0] != y_codes.size:
        raise ValidationError(f"soft predictions of shape {theta.shape} do not match {y_codes.size} labels")
    mass = theta.sum(axis=0)
    empty = mass <= 0
    if np.all(empty):
        raise DegenerateInputError("soft predictions carry no mass")
    if np.any(empty):
        warnings.warn(
            f"{int(empty.sum())} source classes have zero total mass and were dropped",
            RuntimeWarning,
            stacklevel=2,
        )
        theta = theta[:, ~empty]
        mass = mass[~empty]
    onehot = np.zeros((y_codes.size, C))
    onehot[np.arange(y_codes.size), y_codes] = 1.0
    joint = theta.T @ onehot
    cond = joint / mass[:, None]
    inner = np.einsum("iz,zi->i", theta, cond[:, y_codes])
    return float(np.mean(np.log(np.maximum(inner, LOG_CLAMP))))


def nleep(
    F,
    y,
    K: int | None = None,
    q: int | None = None,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> float:
    """LEEP against the posterior responsibilities of a GMM fitted to the features.

    Features are randomly projected to ``q = min(64, d)`` columns (skipped
    when ``q == d``) and z-normalized before fitting.  ``K`` defaults to the
    number of classes.
    """
    F = np.asarray(F, dtype=np.float64)
    y = _labels(y)
    if F.ndim != 2 or F.shape[0] != y.size:
        raise ValidationError(f"feature matrix of shape {F.shape} does not match {y.size} labels")
    n, d = F.shape
    if K is None:
        K = as_class_indices(y)[1]
    if n < K:
        raise DegenerateInputError(f"{n} samples cannot support {K} mixture components")
    q = min(NLEEP_MAX_DIM, d) if q is None else int(q)
    if q < d:
        F = gaussian_random_projection(F, ProjectionSpec(q, seed))
    X = center_and_standardize(F)
    model = fit_gmm(X, K, stream(seed, "nleep-gmm"), max_iter=max_iter, tol=tol)
    return leep(y, model.responsibilities(X))


def normalize_metric(raw: float, hY: float) -> float:
    """``1 + raw / H(Y)``."""
    if not hY > 0:
        raise DegenerateInputError(f"label entropy must be positive to normalize, got {hY}")
    return 1.0 + raw / hY
