from typing import Optional, Tuple

import numpy as np

from facehop.errors import ValidationError


class CovarianceAccumulator:
    """
    Streaming mean/covariance over sample rows.

    Partial accumulators built on disjoint shards can be merged in any order;
    the merged result matches a single pass up to rounding.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self.scatter = np.zeros((dim, dim))

    def update(self, samples: np.ndarray) -> "CovarianceAccumulator":
        samples = np.asarray(samples, dtype=np.float64).reshape(-1, self.dim)
        if len(samples) == 0:
            return self
        batch = CovarianceAccumulator(self.dim)
        batch.count = len(samples)
        batch.mean = samples.mean(axis=0)
        centered = samples - batch.mean
        batch.scatter = centered.T @ centered
        return self.merge(batch)

    def merge(self, other: "CovarianceAccumulator") -> "CovarianceAccumulator":
        if other.dim != self.dim:
            raise ValidationError(
                f"Cannot merge accumulators of dimension {self.dim} and {other.dim}"
            )
        if other.count == 0:
            return self
        if self.count == 0:
            self.count = other.count
            self.mean = other.mean.copy()
            self.scatter = other.scatter.copy()
            return self

        total = self.count + other.count
        delta = other.mean - self.mean
        self.scatter = (
            self.scatter
            + other.scatter
            + np.outer(delta, delta) * (self.count * other.count / total)
        )
        self.mean = self.mean + delta * (other.count / total)
        self.count = total
        return self

    def covariance(self) -> np.ndarray:
        # population covariance
        if self.count == 0:
            raise ValidationError("Covariance requested from an empty accumulator")
        cov = self.scatter / self.count
        return (cov + cov.T) / 2.0


def fix_signs(rows: np.ndarray) -> np.ndarray:
    """Flip each row so that its largest-magnitude entry is positive."""
    rows = np.atleast_2d(rows)
    if rows.size == 0:
        return rows
    pivots = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(len(rows)), pivots])
    signs[signs == 0] = 1.0
    return rows * signs[:, None]


def sorted_eigh(cov: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Symmetric eigendecomposition sorted by non-increasing eigenvalue.

    Equal eigenvalues keep the solver's index order. Eigenvectors are returned
    as sign-normalised rows; tiny negative eigenvalues are clipped to zero.
    """
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(-values, kind="stable")
    values = np.clip(values[order], 0.0, None)
    vectors = fix_signs(vectors[:, order].T)
    return values, vectors


def significant(values: np.ndarray, rel_floor: float = 1e-12) -> np.ndarray:
    """Boolean mask of eigenvalues above ``rel_floor`` times the largest one."""
    if values.size == 0 or values[0] <= 0.0:
        return np.zeros(values.shape, dtype=bool)
    return values > rel_floor * values[0]


def project(
    samples: np.ndarray, components: np.ndarray, mean: Optional[np.ndarray] = None
) -> np.ndarray:
    if mean is not None:
        samples = samples - mean
    return samples @ components.T
