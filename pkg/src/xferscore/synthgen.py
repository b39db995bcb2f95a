"""Synthetic classification tasks and class/imbalance resampling.

Clusters sit at distinct vertices of the hypercube ``{-s, +s}^k`` spanned by
the first ``k = d_informative`` columns (``s = class_sep``); the remaining
columns are i.i.d. standard normal noise.  Within-class scatter in the
informative block is unit-variance isotropic by default.  Setting
``within_condition > 1`` replaces it with a shared covariance
``Q diag(lam) Q^T`` whose eigenvalues are geometrically spaced with that
condition number and mean one (``Q`` a random rotation), which gives the
feature covariance realistic anisotropy without changing its average scale.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._rng import stream
from .errors import InsufficientDataError, SpecError
from .matrixio import encode_labels


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    d: int
    d_informative: int
    C: int
    class_sep: float = 1.0
    seed: int = 0
    within_condition: float = 1.0

    def __post_init__(self):
        if self.C < 2:
            raise SpecError(f"need at least 2 classes, got {self.C}")
        if self.n < self.C:
            raise SpecError(f"n={self.n} is smaller than the number of classes {self.C}")
        if not 1 <= self.d_informative <= self.d:
            raise SpecError(f"d_informative must be in [1, d={self.d}], got {self.d_informative}")
        if self.d_informative < 63 and 2**self.d_informative < self.C:
            raise SpecError(f"{self.C} classes do not fit on the vertices of a {self.d_informative}-cube")
        if self.class_sep < 0:
            raise SpecError("class_sep must be non-negative")
        if self.within_condition < 1:
            raise SpecError("within_condition must be >= 1")

    def with_n(self, n: int) -> "SyntheticSpec":
        return replace(self, n=n)


def _hypercube_vertices(C: int, k: int, rng: np.random.Generator) -> np.ndarray:
    if k <= 16:
        picks = rng.choice(2**k, size=C, replace=False)
        bits = (picks[:, None] >> np.arange(k)) & 1
        return bits.astype(np.float64)
    rows: list[np.ndarray] = []
    seen: set[bytes] = set()
    while len(rows) < C:
        b = rng.integers(0, 2, size=k, dtype=np.uint8)
        key = b.tobytes()
        if key not in seen:
            seen.add(key)
            rows.append(b.astype(np.float64))
    return np.stack(rows)


class SyntheticPopulation:
    """The distribution behind a :class:`SyntheticSpec`; sampling is separate from structure."""

    def __init__(self, d: int, d_informative: int, centroids: np.ndarray, mixing: np.ndarray | None):
        self.d = d
        self.d_informative = d_informative
        self.centroids = centroids
        self.mixing = mixing

    @property
    def n_classes(self) -> int:
        return self.centroids.shape[0]

    @classmethod
    def from_spec(cls, spec: SyntheticSpec) -> "SyntheticPopulation":
        rng = stream(spec.seed, "structure")
        k = spec.d_informative
        centroids = spec.class_sep * (2.0 * _hypercube_vertices(spec.C, k, rng) - 1.0)
        mixing = None
        if spec.within_condition > 1.0:
            lam = np.geomspace(1.0, spec.within_condition, k)
            lam /= lam.mean()
            Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
            mixing = (Q * np.sqrt(lam)) @ Q.T
        return cls(spec.d, k, centroids, mixing)

    def balanced_labels(self, n: int, rng: np.random.Generator) -> np.ndarray:
        y = np.arange(n) % self.n_classes
        rng.shuffle(y)
        return y

    def _features(self, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        F = rng.standard_normal((y.size, self.d))
        k = self.d_informative
        if self.mixing is not None:
            F[:, :k] = F[:, :k] @ self.mixing
        F[:, :k] += self.centroids[y]
        return F

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        y = self.balanced_labels(n, rng)
        return self._features(y, rng), y

    def sample_chunks(self, n: int, rng: np.random.Generator, chunk_size: int = 50_000):
        """Yield ``(F, y)`` blocks of at most ``chunk_size`` rows totalling ``n``.

        With ``chunk_size >= n`` the single block equals ``sample(n, rng)``.
        """
        y = self.balanced_labels(n, rng)
        for start in range(0, n, chunk_size):
            block = y[start : start + chunk_size]
            yield self._features(block, rng), block


def make_classification(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``spec.n`` samples; class sizes differ by at most one."""
    return SyntheticPopulation.from_spec(spec).sample(spec.n, stream(spec.seed, "sample"))


def subsample_classes(F, y, classes_to_keep: int, per_class: int | None, seed: int = 0):
    """Random class subset, then a random ``per_class`` rows of each kept class.

    Rows keep their original relative order; labels are remapped to
    ``0..k-1`` by first appearance.  ``per_class=None`` keeps every row of
    the chosen classes.
    """
    F = np.asarray(F)
    y = np.asarray(y)
    classes = np.unique(y)
    if classes_to_keep > classes.size:
        raise InsufficientDataError(f"asked for {classes_to_keep} classes, only {classes.size} exist")
    rng = stream(seed, "subsample-classes")
    chosen = rng.choice(classes, size=classes_to_keep, replace=False)
    keep: list[np.ndarray] = []
    for c in chosen:
        idx = np.flatnonzero(y == c)
        if per_class is not None:
            if per_class > idx.size:
                raise InsufficientDataError(f"class {c} has {idx.size} samples, asked for {per_class}")
            idx = rng.choice(idx, size=per_class, replace=False)
        keep.append(idx)
    rows = np.sort(np.concatenate(keep))
    return F[rows], encode_labels(y[rows]).labels


def make_imbalanced_pair(F, y, n_minority_range=(30, 60), ratio: float = 5, seed: int = 0):
    """Binary task: ``n1`` rows of one class (label 0) and ``round(ratio * n1)`` of another (label 1).

    ``n1`` is uniform on the inclusive ``n_minority_range``; both classes are
    drawn uniformly from those with enough rows.
    """
    F = np.asarray(F)
    y = np.asarray(y)
    lo, hi = n_minority_range
    if lo < 1 or hi < lo:
        raise InsufficientDataError(f"invalid minority range {n_minority_range}")
    if ratio < 1:
        raise InsufficientDataError(f"ratio must be >= 1, got {ratio}")
    rng = stream(seed, "imbalanced-pair")
    n1 = int(rng.integers(lo, hi + 1))
    n2 = int(round(ratio * n1))
    classes, counts = np.unique(y, return_counts=True)
    majority_ok = classes[counts >= n2]
    if majority_ok.size == 0:
        raise InsufficientDataError(f"no class has {n2} samples")
    major = rng.choice(majority_ok)
    minority_ok = classes[(counts >= n1) & (classes != major)]
    if minority_ok.size == 0:
        raise InsufficientDataError(f"no second class has {n1} samples")
    minor = rng.choice(minority_ok)
    i1 = rng.choice(np.flatnonzero(y == minor), size=n1, replace=False)
    i2 = rng.choice(np.flatnonzero(y == major), size=n2, replace=False)
    rows = np.concatenate([i1, i2])
    labels = np.concatenate([np.zeros(n1, dtype=np.int64), np.ones(n2, dtype=np.int64)])
    order = rng.permutation(rows.size)
    return F[rows[order]], labels[order]


def random_soft_predictor(n: int, n_source_classes: int, rng: np.random.Generator, temperature: float = 1.0) -> np.ndarray:
    """Label-independent soft predictions: softmax of i.i.d. Gaussian logits."""
    logits = rng.standard_normal((n, n_source_classes)) / temperature
    logits -= logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    return P / P.sum(axis=1, keepdims=True)


def linear_soft_predictor(F, n_source_classes: int, rng: np.random.Generator, temperature: float = 1.0) -> np.ndarray:
    """Soft predictions of a fixed random linear "source head" applied to ``F``."""
    F = np.asarray(F, dtype=np.float64)
    Fs = (F - F.mean(axis=0)) / (F.std(axis=0) + 1e-12)
    head = rng.standard_normal((F.shape[1], n_source_classes)) / np.sqrt(F.shape[1])
    logits = Fs @ head / temperature
    logits -= logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    return P / P.sum(axis=1, keepdims=True)


def nearest_mean_accuracy(F, y, seed: int = 0, train_fraction: float = 0.5) -> float:
    """Held-out accuracy of a nearest-class-mean probe on standardized features.

    A cheap stand-in for fine-tuned accuracy when building synthetic task
    bundles.
    """
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y)
    rng = stream(seed, "probe-split")
    train = np.zeros(y.size, dtype=bool)
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        k = max(1, int(round(train_fraction * idx.size)))
        if k >= idx.size and idx.size > 1:
            k = idx.size - 1
        train[rng.choice(idx, size=k, replace=False)] = True
    test = ~train
    if not test.any():
        return float("nan")
    mu = F[train].mean(axis=0)
    sd = F[train].std(axis=0) + 1e-12
    Z = (F - mu) / sd
    classes = np.unique(y[train])
    means = np.stack([Z[train & (y == c)].mean(axis=0) for c in classes])
    dist = ((Z[test, None, :] - means[None]) ** 2).sum(axis=2)
    pred = classes[np.argmin(dist, axis=1)]
    return float(np.mean(pred == y[test]))
