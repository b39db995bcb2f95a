"""Gaussian random projection to a common embedding width."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ._rng import stream
from .errors import DimensionError

DEFAULT_SMS_DIM = 128


@dataclass(frozen=True)
class ProjectionSpec:
    q: int
    seed: int = 0

    def __post_init__(self):
        if self.q < 1:
            raise DimensionError(f"projection dimension must be >= 1, got {self.q}")


def projection_matrix(d: int, spec: ProjectionSpec) -> np.ndarray:
    """``d x q`` matrix with i.i.d. ``N(0, 1/q)`` entries.

    Drawn from a PCG64 stream keyed on ``(spec.seed, "projection")``, filled
    row-major with standard normals and scaled by ``1/sqrt(q)``.
    """
    if spec.q > d:
        raise DimensionError(f"cannot project {d} features to {spec.q} dimensions")
    rng = stream(spec.seed, "projection")
    return rng.standard_normal((d, spec.q)) / np.sqrt(spec.q)


def gaussian_random_projection(F, spec: ProjectionSpec) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    return F @ projection_matrix(F.shape[1], spec)


def common_projection_dim(dims: Iterable[int], cap: int = DEFAULT_SMS_DIM) -> int:
    """Shared target width for comparing several models: ``min(min(dims), cap)``."""
    dims = list(dims)
    if not dims:
        raise DimensionError("no embedding dimensions given")
    return int(min(min(dims), cap))
