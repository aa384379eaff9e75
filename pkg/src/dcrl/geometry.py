"""Distances, neighbour graphs, closeness ranks and per-cluster means.

Ties are always broken toward the smaller index, so ``knn`` and ``ranks``
agree: ``j in knn(D, k).indices[i]`` exactly when ``ranks(D)[i, j] <= k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError
from .ndtensor import as_matrix


@dataclass(frozen=True)
class NeighborGraph:
    k: int
    indices: np.ndarray  # (N, k) int64, nearest first
    distances: np.ndarray  # (N, k) float64, non-decreasing per row

    @property
    def n(self) -> int:
        return self.indices.shape[0]


@dataclass(frozen=True)
class ManifoldCenters:
    centers: np.ndarray  # (C, dim); rows of empty clusters are zero
    valid: np.ndarray  # (C,) bool
    counts: np.ndarray  # (C,) int64

    @property
    def all_valid(self) -> bool:
        return bool(self.valid.all())


def cross_sq_dist(a, b) -> np.ndarray:
    """Squared distances between the rows of ``a`` and of ``b`` via the
    norm expansion, clamped at zero."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"cross distances: {a.shape} vs {b.shape}")
    na = np.einsum("ij,ij->i", a, a)
    nb = np.einsum("ij,ij->i", b, b)
    sq = na[:, None] + nb[None, :] - 2.0 * (a @ b.T)
    return np.maximum(sq, 0.0)


def pairwise_dist(x) -> np.ndarray:
    """Euclidean distance matrix: symmetric, exactly zero on the diagonal."""
    x = as_matrix(x)
    d = np.sqrt(cross_sq_dist(x, x))
    upper = np.triu(d, 1)
    return upper + upper.T


def knn(D, k: int) -> NeighborGraph:
    D = as_matrix(D)
    n = D.shape[0]
    if D.shape != (n, n):
        raise DimensionError(f"knn needs a square distance matrix, got {D.shape}")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, N-1] = [1, {n - 1}], got {k}")
    idx, dist = kernels.knn_select(D, int(k))
    return NeighborGraph(int(k), idx, dist)


def ranks(D) -> np.ndarray:
    """Closeness ranks r[i, j] in 1..N-1 for j != i; the diagonal is 0."""
    D = as_matrix(D)
    if D.shape[0] != D.shape[1]:
        raise DimensionError(f"ranks needs a square distance matrix, got {D.shape}")
    return kernels.rank_matrix(D)


def manifold_centers(x, s, C: int) -> ManifoldCenters:
    x = as_matrix(x)
    s = np.asarray(s, dtype=np.int64)
    if s.shape != (x.shape[0],):
        raise DimensionError(f"{s.shape[0]} assignments for {x.shape[0]} points")
    if s.size and (s.min() < 0 or s.max() >= C):
        raise ValueError(f"assignments must lie in [0, {C})")
    counts = np.bincount(s, minlength=C).astype(np.int64)
    sums = np.zeros((C, x.shape[1]))
    np.add.at(sums, s, x)
    valid = counts > 0
    centers = np.zeros_like(sums)
    centers[valid] = sums[valid] / counts[valid, None]
    return ManifoldCenters(centers, valid, counts)
