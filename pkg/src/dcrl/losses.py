"""Structure-oriented losses and their centre gradients.

``lis_loss`` acts on embeddings (and reaches the encoder through the
tape version ``lis_loss_t``). ``rank_loss`` and ``align_loss`` act on the
learnable centres only; their gradients are closed-form. ``sep_loss`` is
the point-level push-away baseline kept for ablations.

Non-differentiable points (|t| at t = 0, |u| at u = 0) get subgradient 0.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from . import ndtensor as nd
from .errors import DimensionError
from .geometry import ManifoldCenters, NeighborGraph, pairwise_dist
from .ndtensor import as_matrix


def _unpack(v, C):
    if isinstance(v, ManifoldCenters):
        return v.centers, v.valid
    v = as_matrix(v)
    if v.shape[0] != C:
        raise DimensionError(f"{v.shape[0]} manifold centres for {C} cluster centres")
    return v, np.ones(C, dtype=bool)


def graph_pair_distances(x, graph: NeighborGraph) -> np.ndarray:
    """|x_i - x_j| for every (i, j) edge of ``graph``, shape (N, k)."""
    x = as_matrix(x)
    diff = x[:, None, :] - x[graph.indices]
    return np.sqrt(np.einsum("nkd,nkd->nk", diff, diff))


def same_cluster_mask(graph: NeighborGraph, s) -> np.ndarray:
    s = np.asarray(s)
    return s[:, None] == s[graph.indices]


def lis_loss(x, z, graph: NeighborGraph, s) -> float:
    """Sum over latent kNN edges (i, j) with s_i == s_j of |d_X - d_Z|."""
    loss, _ = kernels.lis_loss_grad(
        as_matrix(z), graph.indices, same_cluster_mask(graph, s), graph_pair_distances(x, graph)
    )
    return float(loss)


def lis_loss_t(z: nd.Tensor, graph: NeighborGraph, same: np.ndarray, dx: np.ndarray) -> nd.Tensor:
    """Isometry loss on the tape; the graph, mask and input distances are constants."""
    if z.shape[0] != graph.n:
        raise DimensionError(f"graph over {graph.n} points, embeddings have {z.shape[0]} rows")
    loss, grad = kernels.lis_loss_grad(z.data, graph.indices, same, dx)
    return nd.custom_op([[loss]], (z,), lambda g: (g[0, 0] * grad,), op="lis")


def rank_loss(mu, vx, kappa: float) -> float:
    """sum_{i,j} | |mu_i - mu_j| - kappa |vx_i - vx_j| | over ordered pairs
    of valid clusters."""
    mu = as_matrix(mu)
    vx, valid = _unpack(vx, mu.shape[0])
    resid = pairwise_dist(mu) - kappa * pairwise_dist(vx)
    pair = valid[:, None] & valid[None, :]
    return float(np.abs(resid)[pair].sum())


def grad_centers_rank(mu, vx, kappa: float) -> np.ndarray:
    """Row j: 2 sum_i (mu_j - mu_i)/|mu_j - mu_i| * sign(|mu_j - mu_i| - kappa d_X(i, j))."""
    mu = as_matrix(mu)
    vx, valid = _unpack(vx, mu.shape[0])
    dz = pairwise_dist(mu)
    sign = np.sign(dz - kappa * pairwise_dist(vx))
    pair = valid[:, None] & valid[None, :] & (dz > 0)
    coef = np.where(pair, sign / np.where(pair, dz, 1.0), 0.0)
    # sum_i coef_ji (mu_j - mu_i)
    return 2.0 * (coef.sum(axis=1)[:, None] * mu - coef @ mu)


def align_loss(mu, vz) -> float:
    mu = as_matrix(mu)
    vz, valid = _unpack(vz, mu.shape[0])
    diff = (mu - vz)[valid]
    return float(np.sqrt(np.einsum("ij,ij->i", diff, diff)).sum())


def grad_centers_align(mu, vz) -> np.ndarray:
    mu = as_matrix(mu)
    vz, valid = _unpack(vz, mu.shape[0])
    diff = mu - vz
    norm = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    ok = valid & (norm > 0)
    out = np.zeros_like(mu)
    out[ok] = diff[ok] / norm[ok, None]
    return out


def sep_loss(z, s) -> float:
    """-sum over ordered pairs in different clusters of |z_i - z_j|."""
    s = np.asarray(s)
    d = pairwise_dist(z)
    return float(-d[s[:, None] != s[None, :]].sum())


def sep_loss_t(z: nd.Tensor, s) -> nd.Tensor:
    s = np.asarray(s)
    zz = z.data
    diff = zz[:, None, :] - zz[None, :, :]
    d = np.sqrt(np.einsum("ijm,ijm->ij", diff, diff))
    cross = (s[:, None] != s[None, :]) & (d > 0)
    coef = np.where(cross, 1.0 / np.where(cross, d, 1.0), 0.0)
    loss = -d[cross].sum()
    # each unordered pair appears twice, so z_i collects 2 * sum_j coef_ij (z_i - z_j)
    grad = -2.0 * (coef.sum(axis=1)[:, None] * zz - coef @ zz)
    return nd.custom_op([[loss]], (z,), lambda g: (g[0, 0] * grad,), op="sep")
