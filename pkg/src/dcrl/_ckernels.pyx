# cython: language_level=3
"""Compiled twins of the kernels in ``_pykernels``.

Row orderings use a stable merge sort keyed on (distance, index) so every
tie falls to the smaller index, matching numpy's stable argsort.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

cnp.import_array()


ctypedef struct _pair:
    double v
    Py_ssize_t i


cdef inline bint _before(_pair a, _pair b) noexcept nogil:
    return a.v < b.v or (a.v == b.v and a.i < b.i)


cdef void _merge_sort(_pair* buf, _pair* tmp, Py_ssize_t n) noexcept nogil:
    # sorts buf[0:n] by value, index ascending on ties
    cdef Py_ssize_t mid, i, j, t
    cdef _pair x
    if n < 2:
        return
    if n <= 16:
        for i in range(1, n):
            x = buf[i]
            j = i - 1
            while j >= 0 and _before(x, buf[j]):
                buf[j + 1] = buf[j]
                j -= 1
            buf[j + 1] = x
        return
    mid = n // 2
    _merge_sort(buf, tmp, mid)
    _merge_sort(buf + mid, tmp, n - mid)
    i = 0
    j = mid
    t = 0
    while i < mid and j < n:
        if _before(buf[j], buf[i]):
            tmp[t] = buf[j]
            j += 1
        else:
            tmp[t] = buf[i]
            i += 1
        t += 1
    while i < mid:
        tmp[t] = buf[i]
        i += 1
        t += 1
    while j < n:
        tmp[t] = buf[j]
        j += 1
        t += 1
    memcpy(buf, tmp, n * sizeof(_pair))


def knn_select(D, Py_ssize_t k):
    cdef const double[:, :] d = np.ascontiguousarray(D, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0]
    out_i = np.empty((n, k), dtype=np.int64)
    out_d = np.empty((n, k), dtype=np.float64)
    cdef long long[:, :] oi = out_i
    cdef double[:, :] od = out_d
    # bounded insertion into a sorted buffer of size k
    cdef Py_ssize_t i, j, p, filled
    cdef double v
    with nogil:
        for i in range(n):
            filled = 0
            for j in range(n):
                if j == i:
                    continue
                v = d[i, j]
                if filled == k and not (v < od[i, k - 1]):
                    continue
                p = filled if filled < k else k - 1
                while p > 0 and v < od[i, p - 1]:
                    if p < k:
                        od[i, p] = od[i, p - 1]
                        oi[i, p] = oi[i, p - 1]
                    p -= 1
                if p < k:
                    od[i, p] = v
                    oi[i, p] = j
                if filled < k:
                    filled += 1
    return out_i, out_d


def rank_matrix(D):
    cdef const double[:, :] d = np.ascontiguousarray(D, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0]
    ranks = np.zeros((n, n), dtype=np.int64)
    cdef long long[:, :] r = ranks
    cdef _pair* buf = <_pair*> malloc(2 * max(n, 1) * sizeof(_pair))
    if buf == NULL:
        raise MemoryError()
    cdef Py_ssize_t i, j, p
    try:
        with nogil:
            for i in range(n):
                p = 0
                for j in range(n):
                    if j != i:
                        buf[p].v = d[i, j]
                        buf[p].i = j
                        p += 1
                _merge_sort(buf, buf + n, n - 1)
                for p in range(n - 1):
                    r[i, buf[p].i] = p + 1
    finally:
        free(buf)
    return ranks


def lis_loss_grad(z, nbr, same, dx):
    cdef const double[:, :] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef const long long[:, :] nb = np.ascontiguousarray(nbr, dtype=np.int64)
    cdef const unsigned char[:, :] sm = np.ascontiguousarray(same, dtype=np.uint8)
    cdef const double[:, :] dxx = np.ascontiguousarray(dx, dtype=np.float64)
    cdef Py_ssize_t n = zz.shape[0], m = zz.shape[1], k = nb.shape[1]
    grad = np.zeros((n, m), dtype=np.float64)
    cdef double[:, :] g = grad
    cdef Py_ssize_t i, p, j, c
    cdef double loss = 0.0, dz, diff, resid, coef
    with nogil:
        for i in range(n):
            for p in range(k):
                if not sm[i, p]:
                    continue
                j = nb[i, p]
                dz = 0.0
                for c in range(m):
                    diff = zz[i, c] - zz[j, c]
                    dz += diff * diff
                dz = sqrt(dz)
                resid = dxx[i, p] - dz
                loss += fabs(resid)
                if dz <= 0.0 or resid == 0.0:
                    continue
                coef = (1.0 if resid < 0.0 else -1.0) / dz
                for c in range(m):
                    diff = coef * (zz[i, c] - zz[j, c])
                    g[i, c] += diff
                    g[j, c] -= diff
    return loss, grad


def neighbourhood_sums(rx, rz, Py_ssize_t k1, Py_ssize_t k2):
    cdef const long long[:, :] RX = np.ascontiguousarray(rx, dtype=np.int64)
    cdef const long long[:, :] RZ = np.ascontiguousarray(rz, dtype=np.int64)
    cdef Py_ssize_t n = RX.shape[0], nk = k2 - k1 + 1
    # inverse permutations: ord[i, r - 1] is the point of rank r around i
    ox = np.zeros((n, k2), dtype=np.int64)
    oz = np.zeros((n, k2), dtype=np.int64)
    cdef long long[:, :] OX = ox
    cdef long long[:, :] OZ = oz
    trust = np.zeros(nk)
    cont = np.zeros(nk)
    mr_xz = np.zeros(nk)
    mr_zx = np.zeros(nk)
    cdef double[:] T = trust, Cn = cont, MXZ = mr_xz, MZX = mr_zx
    cdef Py_ssize_t i, j, r, kk, lo
    cdef long long other
    cdef double frac
    with nogil:
        for i in range(n):
            for j in range(n):
                if j == i:
                    continue
                if RX[i, j] <= k2:
                    OX[i, RX[i, j] - 1] = j
                if RZ[i, j] <= k2:
                    OZ[i, RZ[i, j] - 1] = j
        for i in range(n):
            for r in range(1, k2 + 1):
                lo = r if r > k1 else k1
                # j in the rank-r latent slot: member of N^k_Z for k >= r
                j = OZ[i, r - 1]
                other = RX[i, j]
                frac = fabs(<double>(other - r)) / r
                for kk in range(lo, k2 + 1):
                    MXZ[kk - k1] += frac
                    if other > kk:
                        T[kk - k1] += other - kk
                j = OX[i, r - 1]
                other = RZ[i, j]
                frac = fabs(<double>(other - r)) / r
                for kk in range(lo, k2 + 1):
                    MZX[kk - k1] += frac
                    if other > kk:
                        Cn[kk - k1] += other - kk
    return trust, cont, mr_xz, mr_zx
