"""Sample covariance, Ledoit-Wolf shrinkage intensity, and class statistics.

All covariances use the population convention (divide by ``n``).  The
matrix norm used by the shrinkage intensity is the dimension-normalized
Frobenius norm ``||A||^2 = tr(A A^T) / d``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ValidationError

CONSTANT_COLUMN_STD = 1e-12
DEGENERATE_DENOMINATOR = 1e-18


@dataclass(frozen=True)
class ClassStats:
    """Per-class counts and means of a feature matrix.

    ``R`` has column ``c`` equal to ``sqrt(n_c) * mean_c``; when the feature
    matrix is centered, ``R @ R.T / n`` is the covariance of the
    class-conditional means.
    """

    class_counts: np.ndarray
    class_means: np.ndarray
    R: np.ndarray
    global_mean: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.class_counts)

    @property
    def n_samples(self) -> int:
        return int(self.class_counts.sum())

    def between_covariance(self) -> np.ndarray:
        return self.R @ self.R.T / self.n_samples


@dataclass(frozen=True)
class ShrunkCovarianceModel:
    sigma_f: np.ndarray
    alpha: float
    sigma_bar: float
    class_stats: ClassStats | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.sigma_bar < 0:
            raise ValidationError(f"average variance must be non-negative, got {self.sigma_bar}")


def as_class_indices(y) -> tuple[np.ndarray, int]:
    """Map labels to ``0..C-1`` (sorted order) and return ``(codes, C)``."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValidationError(f"labels must be 1-D, got shape {y.shape}")
    _, codes = np.unique(y, return_inverse=True)
    codes = codes.reshape(-1)
    return codes, int(codes.max()) + 1 if codes.size else 0


def center_and_standardize(F) -> np.ndarray:
    """Column-wise z-normalization with the population standard deviation.

    Constant columns (std below 1e-12) are only centered, so they come out as
    all zeros and ``d`` is left unchanged.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.shape[0] < 2:
        raise DegenerateInputError(f"standardization needs at least 2 samples, got {F.shape[0]}")
    Fc = F - F.mean(axis=0)
    # scale by the column max before squaring so huge entries cannot overflow
    peak = np.max(np.abs(Fc), axis=0)
    peak[peak == 0] = 1.0
    std = peak * np.sqrt(np.mean((Fc / peak) ** 2, axis=0))
    std[std < CONSTANT_COLUMN_STD] = 1.0
    Fc /= std
    return Fc


def sample_covariance(F) -> np.ndarray:
    """``F.T @ F / n`` for an already-centered ``F``."""
    F = np.asarray(F, dtype=np.float64)
    S = F.T @ F / F.shape[0]
    return (S + S.T) / 2


def _alpha_from_moments(n: int, d: int, sum_row_norm4: float, tr_s: float, tr_s2: float) -> float:
    # ||S - (tr S / d) I||^2 with the normalized Frobenius norm
    denominator = (tr_s2 - tr_s * tr_s / d) / d
    # the subtraction cancels when S is (numerically) isotropic; treat anything
    # within rounding of tr(S^2) like the absolute floor so the rule is scale-free
    if denominator < DEGENERATE_DENOMINATOR or denominator <= 64 * np.finfo(float).eps * tr_s2 / d:
        return 1.0
    # sum_i ||f_i f_i^T - S||^2 = (sum_i |f_i|^4 - n tr(S^2)) / d
    excess = sum_row_norm4 - n * tr_s2
    # at n = 2 the two terms agree exactly; do not let rounding make alpha tiny but nonzero
    if excess <= 64 * np.finfo(float).eps * sum_row_norm4:
        return 0.0
    numerator = excess / d / (n * n)
    return float(min(max(numerator / denominator, 0.0), 1.0))


def ledoit_wolf_alpha(F) -> float:
    """Optimal shrinkage intensity toward ``(tr S / d) I`` for a centered ``F``.

    Uses the streaming form of the numerator so no ``d x d`` outer products
    are formed; ``tr(S^2)`` comes from whichever Gram matrix is smaller.
    """
    F = np.asarray(F, dtype=np.float64)
    n, d = F.shape
    if n < 2:
        raise DegenerateInputError(f"shrinkage intensity needs at least 2 samples, got {n}")
    row_sq = np.einsum("ij,ij->i", F, F)
    if n < d:
        gram = F @ F.T
    else:
        gram = F.T @ F
    tr_s = float(row_sq.sum()) / n
    tr_s2 = float(np.sum(gram * gram)) / (n * n)
    return _alpha_from_moments(n, d, float(np.sum(row_sq * row_sq)), tr_s, tr_s2)


def class_statistics(F, y) -> ClassStats:
    F = np.asarray(F, dtype=np.float64)
    codes, C = as_class_indices(y)
    if codes.size != F.shape[0]:
        raise ValidationError(f"{codes.size} labels for {F.shape[0]} samples")
    counts = np.bincount(codes, minlength=C)
    sums = np.zeros((C, F.shape[1]))
    np.add.at(sums, codes, F)
    means = sums / counts[:, None]
    R = (means * np.sqrt(counts)[:, None]).T
    return ClassStats(class_counts=counts, class_means=means, R=R, global_mean=F.mean(axis=0))


def fit_shrunk_covariance(F, y=None, alpha: float | None = None) -> ShrunkCovarianceModel:
    """Sample covariance and shrinkage intensity of a centered ``F``."""
    F = np.asarray(F, dtype=np.float64)
    S = sample_covariance(F)
    if alpha is None:
        alpha = ledoit_wolf_alpha(F)
    stats = class_statistics(F, y) if y is not None else None
    return ShrunkCovarianceModel(sigma_f=S, alpha=float(alpha), sigma_bar=float(np.trace(S)) / S.shape[0], class_stats=stats)


def shrunk_covariance(model: ShrunkCovarianceModel) -> np.ndarray:
    """``(1 - alpha) S + alpha * sigma_bar * I``."""
    d = model.sigma_f.shape[0]
    out = (1.0 - model.alpha) * model.sigma_f
    out[np.diag_indices(d)] += model.alpha * model.sigma_bar
    return out


def class_conditional_covariances(F, y) -> list[np.ndarray]:
    """Covariance of each class about its own mean, normalized by ``n_c``.

    With these, ``sum_c (n_c / n) * cov_c + R R^T / n`` reproduces the sample
    covariance of a centered ``F`` exactly.
    """
    F = np.asarray(F, dtype=np.float64)
    codes, C = as_class_indices(y)
    out = []
    for c in range(C):
        block = F[codes == c]
        dev = block - block.mean(axis=0)
        out.append(dev.T @ dev / block.shape[0])
    return out
