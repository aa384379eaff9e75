"""Learnable cluster centres with Student-t soft assignment.

The soft assignment of embedding z_i to centre mu_j is

    q_ij = (1 + |z_i - mu_j|^2)^-1 / sum_j' (1 + |z_i - mu_j'|^2)^-1

and the sharpened target is p_ij proportional to q_ij^2 / f_j with
f_j = sum_i q_ij. Training minimises KL(P || Q) with P held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .errors import DimensionError, InitializationError
from .geometry import cross_sq_dist
from .ndtensor import as_matrix


@dataclass
class ClusterState:
    centers: np.ndarray  # (C, m)
    q: np.ndarray  # (N, C)
    p: np.ndarray  # (N, C)
    s: np.ndarray  # (N,) argmax of p

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]

    def predictions(self, by="p") -> np.ndarray:
        if by == "p":
            return self.s
        if by == "q":
            return hard_assign(self.q)
        raise ValueError(f"predictions by 'p' or 'q', got {by!r}")


def soft_assign(z, mu) -> np.ndarray:
    z, mu = as_matrix(z), as_matrix(mu)
    if z.shape[1] != mu.shape[1]:
        raise DimensionError(f"embeddings have {z.shape[1]} columns, centres {mu.shape[1]}")
    t = 1.0 / (1.0 + cross_sq_dist(z, mu))
    return t / t.sum(axis=1, keepdims=True)


def target_distribution(q) -> np.ndarray:
    q = as_matrix(q)
    w = q * q / q.sum(axis=0)
    return w / w.sum(axis=1, keepdims=True)


def hard_assign(p) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the smallest index
    return np.argmax(as_matrix(p), axis=1).astype(np.int64)


def kl_cluster_loss(p, q) -> float:
    p, q = as_matrix(p), as_matrix(q)
    if p.shape != q.shape:
        raise DimensionError(f"P {p.shape} vs Q {q.shape}")
    pos = p > 0
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])))


def grad_centers_cluster(z, mu, p, q) -> np.ndarray:
    """d KL(P||Q) / d mu with P fixed, shape (C, m).

    Row j is -2 * sum_i (1 + |z_i - mu_j|^2)^-1 (p_ij - q_ij)(z_i - mu_j).
    The factor 2 is the Student-t exponent for one degree of freedom.
    """
    z, mu, p, q = as_matrix(z), as_matrix(mu), as_matrix(p), as_matrix(q)
    kernel = 1.0 / (1.0 + cross_sq_dist(z, mu))
    w = kernel * (p - q)  # (N, C)
    return -2.0 * (w.T @ z - w.sum(axis=0)[:, None] * mu)


# -- tape versions, used when the encoder needs gradients ------------------

def soft_assign_t(z: nd.Tensor, mu) -> nd.Tensor:
    kernel = nd.reciprocal(nd.add_scalar(nd.sq_dist(z, mu), 1.0))
    return nd.row_normalize(kernel)


def kl_cluster_loss_t(p, q: nd.Tensor) -> nd.Tensor:
    p = as_matrix(p)
    pos = p > 0
    const = float(np.sum(p[pos] * np.log(p[pos])))
    return nd.add_scalar(nd.scale(nd.tsum(nd.mul(nd.Tensor(p), nd.log(q))), -1.0), const)


# -- initialisation --------------------------------------------------------

def _objective(x, centers, labels) -> float:
    diff = x - centers[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _plusplus(x, C, rng) -> np.ndarray:
    n = x.shape[0]
    first = int(rng.integers(n))
    centers = [x[first]]
    d2 = cross_sq_dist(x, x[first:first + 1])[:, 0]
    for _ in range(1, C):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(x[idx])
        d2 = np.minimum(d2, cross_sq_dist(x, x[idx:idx + 1])[:, 0])
    return np.array(centers)


def lloyd(x, centers, max_iters=300):
    """Lloyd iterations from given centres.

    Returns ``(centers, labels, objectives)``; ``objectives`` records the
    within-cluster sum of squares after every assignment step and never
    increases. An empty cluster is reseeded once from the point farthest
    from its centre; a second empty cluster raises InitializationError.
    """
    x = as_matrix(x)
    centers = as_matrix(centers).copy()
    C = centers.shape[0]
    labels = None
    history = []
    reseeded = False
    for _ in range(max_iters):
        new = np.argmin(cross_sq_dist(x, centers), axis=1)
        history.append(_objective(x, centers, new))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=C)
        for j in np.flatnonzero(counts == 0):
            if reseeded:
                raise InitializationError(f"cluster {j} empty after reseeding")
            reseeded = True
            far = int(np.argmax(np.einsum("ij,ij->i", x - centers[labels], x - centers[labels])))
            labels[far] = j
            counts = np.bincount(labels, minlength=C)
            if counts.min() == 0:
                raise InitializationError(f"cluster {j} empty after reseeding")
        for j in range(C):
            centers[j] = x[labels == j].mean(axis=0)
    else:
        labels = np.argmin(cross_sq_dist(x, centers), axis=1)
    return centers, labels.astype(np.int64), history


def kmeans(x, C: int, max_iters: int = 300, seed: int = 0, n_init: int = 10):
    """k-means++ seeding followed by Lloyd; best of ``n_init`` restarts."""
    x = as_matrix(x)
    if C < 1 or x.shape[0] < C:
        raise InitializationError(f"need at least C={C} points, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    best = None
    last_err = None
    for _ in range(n_init):
        try:
            centers, labels, _ = lloyd(x, _plusplus(x, C, rng), max_iters)
        except InitializationError as err:
            last_err = err
            continue
        obj = _objective(x, centers, labels)
        if best is None or obj < best[0]:
            best = (obj, centers, labels)
    if best is None:
        raise last_err
    return best[1], best[2]


def init_centers(z, C: int, seed: int = 0) -> ClusterState:
    """Centres from k-means on the latent rows, then Q, P and s."""
    z = as_matrix(z)
    _, labels = kmeans(z, C, seed=seed)
    counts = np.bincount(labels, minlength=C)
    if counts.min() == 0:
        raise InitializationError("k-means left an empty cluster")
    mu = np.zeros((C, z.shape[1]))
    np.add.at(mu, labels, z)
    mu /= counts[:, None]
    return state_from_centers(z, mu)


def state_from_centers(z, mu) -> ClusterState:
    q = soft_assign(z, mu)
    p = target_distribution(q)
    return ClusterState(as_matrix(mu).copy(), q, p, hard_assign(p))
