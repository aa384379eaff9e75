"""Pure numpy implementations of the hot kernels.

Every function here has a twin of the same name and signature in
``_ckernels.pyx``. Integer outputs (neighbour indices, ranks, trust/cont
sums) are identical between the two; floating sums agree to rounding.
"""

import numpy as np


def _order(D, self_first):
    # stable argsort on each row breaks distance ties by column index
    D = np.array(D, dtype=np.float64, copy=True)
    np.fill_diagonal(D, -np.inf if self_first else np.inf)
    return np.argsort(D, axis=1, kind="stable")


def knn_select(D, k):
    """k nearest off-diagonal entries of each row of ``D``.

    Returns ``(indices, distances)``, both of shape (N, k).
    """
    D = np.asarray(D, dtype=np.float64)
    idx = _order(D, self_first=False)[:, :k]
    dist = np.take_along_axis(D, idx, axis=1)
    return np.ascontiguousarray(idx, dtype=np.int64), np.ascontiguousarray(dist)


def rank_matrix(D):
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    order = _order(D, self_first=True)
    ranks = np.empty((n, n), dtype=np.int64)
    rows = np.arange(n)[:, None]
    ranks[rows, order] = np.arange(n)[None, :]
    return ranks


def lis_loss_grad(z, nbr, same, dx):
    """Loss and latent gradient of the intra-manifold isometry term.

    ``nbr`` (N, k) holds latent neighbour indices, ``same`` (N, k) flags
    pairs in the same manifold and ``dx`` (N, k) the matching input-space
    distances.
    """
    z = np.asarray(z, dtype=np.float64)
    n, m = z.shape
    grad = np.zeros((n, m))
    mask = np.asarray(same, dtype=bool)
    if not mask.any():
        return 0.0, grad
    ii = np.broadcast_to(np.arange(n)[:, None], nbr.shape)[mask]
    jj = np.asarray(nbr)[mask]
    diff = z[ii] - z[jj]
    dz = np.sqrt(np.einsum("pm,pm->p", diff, diff))
    resid = np.asarray(dx)[mask] - dz
    loss = float(np.abs(resid).sum())
    # d|dx - dz| / dz = sign(dz - dx); zero at dz == 0 and at dz == dx
    coef = np.sign(-resid)
    safe = dz > 0
    coef = np.where(safe, coef / np.where(safe, dz, 1.0), 0.0)
    contrib = coef[:, None] * diff
    np.add.at(grad, ii, contrib)
    np.add.at(grad, jj, -contrib)
    return loss, grad


def neighbourhood_sums(rx, rz, k1, k2):
    """Per-k sums behind trustworthiness, continuity and relative rank error.

    Returns four arrays of length ``k2 - k1 + 1``: intrusion penalties
    (trust), extrusion penalties (cont), and the unnormalised
    MR_{X->Z} and MR_{Z->X} sums.
    """
    rx = np.asarray(rx, dtype=np.int64)
    rz = np.asarray(rz, dtype=np.int64)
    n = rx.shape[0]
    off = ~np.eye(n, dtype=bool)
    absdiff = np.abs(rx - rz).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        over_rz = np.where(off, absdiff / np.where(off, rz, 1), 0.0)
        over_rx = np.where(off, absdiff / np.where(off, rx, 1), 0.0)
    ks = range(k1, k2 + 1)
    trust = np.zeros(len(ks))
    cont = np.zeros(len(ks))
    mr_xz = np.zeros(len(ks))
    mr_zx = np.zeros(len(ks))
    for t, k in enumerate(ks):
        in_z = off & (rz <= k)
        in_x = off & (rx <= k)
        trust[t] = (rx - k)[in_z & ~in_x].sum()
        cont[t] = (rz - k)[in_x & ~in_z].sum()
        mr_xz[t] = over_rz[in_z].sum()
        mr_zx[t] = over_rx[in_x].sum()
    return trust, cont, mr_xz, mr_zx
