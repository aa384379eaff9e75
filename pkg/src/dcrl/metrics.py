"""Clustering and embedding-quality metrics.

ACC and NMI score predicted labels against ground truth. RRE, Trust,
Cont, d-RMSE and LGD compare the input space X with the embedding Z
through pairwise distances, kNN sets and closeness ranks. CRA compares
the closeness ranks of per-cluster means across the two spaces.

Neighbourhood metrics average over k in [k1, k2]; neighbour sets and
ranks follow the tie rule of :mod:`dcrl.geometry`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .errors import DimensionError, MetricError
from .geometry import manifold_centers, pairwise_dist, ranks
from .ndtensor import as_matrix

DEFAULT_K1 = 1
DEFAULT_K2 = 10


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    nmi: float
    rre: float
    trust: float
    cont: float
    d_rmse: float
    lgd: float
    cra: float
    k1: int
    k2: int

    FIELDS = ("acc", "nmi", "rre", "trust", "cont", "d_rmse", "lgd", "cra", "k1", "k2")

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def csv_header(self) -> str:
        return ",".join(self.FIELDS)

    def csv_row(self) -> str:
        return ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in self.as_dict().values())


def _labels(a, b):
    a = np.asarray(a, dtype=np.int64).ravel()
    b = np.asarray(b, dtype=np.int64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"label vectors differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise MetricError("empty label vectors")
    if a.min() < 0 or b.min() < 0:
        raise MetricError("labels must be non-negative")
    return a, b


def contingency(true, pred) -> np.ndarray:
    true, pred = _labels(true, pred)
    size = int(max(true.max(), pred.max())) + 1
    table = np.zeros((size, size), dtype=np.int64)
    np.add.at(table, (pred, true), 1)
    return table


def acc(true, pred) -> float:
    """Best one-to-one cluster-to-class matching accuracy (Hungarian)."""
    table = contingency(true, pred)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum()) / float(table.sum())


def _entropy(counts) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(true, pred) -> float:
    """I(l; s) / max(H(l), H(s)) in nats; 0 when both entropies vanish."""
    table = contingency(true, pred).astype(np.float64)
    n = table.sum()
    h_pred = _entropy(table.sum(axis=1))
    h_true = _entropy(table.sum(axis=0))
    denom = max(h_true, h_pred)
    if denom <= 0:
        return 0.0
    joint = table / n
    outer = np.outer(joint.sum(axis=1), joint.sum(axis=0))
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    return min(max(mi / denom, 0.0), 1.0)


def default_k_range(n: int, k1=DEFAULT_K1, k2=DEFAULT_K2):
    """Clamp [k1, k2] so every k satisfies k <= N-1 and 2N - 3k - 1 > 0."""
    kmax = min(n - 1, (2 * n - 2) // 3)
    if kmax < 1:
        raise MetricError(f"too few points ({n}) for neighbourhood metrics")
    k2 = min(k2, kmax)
    return min(k1, k2), k2


def _check_k(n, k1, k2):
    if not (1 <= k1 <= k2 <= n - 1):
        raise MetricError(f"need 1 <= k1 <= k2 <= N-1, got k1={k1} k2={k2} N={n}")
    if 2 * n - 3 * k2 - 1 <= 0:
        raise MetricError(f"k2={k2} too large for N={n}: 2N-3k-1 must be positive")


def _pair(X, Z):
    X, Z = as_matrix(X, "X"), as_matrix(Z, "Z")
    if X.shape[0] != Z.shape[0]:
        raise DimensionError(f"X has {X.shape[0]} rows, Z has {Z.shape[0]}")
    return X, Z


class _Neighbourhood:
    """Rank tables of X and Z computed once and shared across metrics."""

    def __init__(self, X, Z):
        X, Z = _pair(X, Z)
        self.n = X.shape[0]
        self.dx = pairwise_dist(X)
        self.dz = pairwise_dist(Z)
        self.rx = ranks(self.dx)
        self.rz = ranks(self.dz)
        self._sums = {}

    def sums(self, k1, k2):
        key = (k1, k2)
        if key not in self._sums:
            self._sums[key] = kernels.neighbourhood_sums(self.rx, self.rz, k1, k2)
        return self._sums[key]

    def rre(self, k1, k2):
        _check_k(self.n, k1, k2)
        _, _, mr_xz, mr_zx = self.sums(k1, k2)
        n = self.n
        total = 0.0
        for t, k in enumerate(range(k1, k2 + 1)):
            h = n * sum(abs(n - 2 * l) / l for l in range(1, k + 1))
            total += (mr_xz[t] + mr_zx[t]) / h
        return total / (k2 - k1 + 1)

    def _tc(self, k1, k2, which):
        _check_k(self.n, k1, k2)
        pen = self.sums(k1, k2)[which]
        n = self.n
        ks = np.arange(k1, k2 + 1)
        vals = 1.0 - 2.0 / (n * ks * (2 * n - 3 * ks - 1)) * pen
        return float(vals.mean())

    def trust(self, k1, k2):
        return self._tc(k1, k2, 0)

    def cont(self, k1, k2):
        return self._tc(k1, k2, 1)

    def d_rmse(self):
        return float(np.sqrt(np.mean((self.dx - self.dz) ** 2)))

    def lgd(self, k1, k2):
        _check_k(self.n, k1, k2)
        n = self.n
        width = k2 - k1 + 1
        sq = (self.dx - self.dz) ** 2
        total = 0.0
        for k in range(k1, k2 + 1):
            in_x = (self.rx >= 1) & (self.rx <= k)
            total += np.sqrt(sq[in_x].sum() / (width**2 * n * k))
        return float(total)


def rre(X, Z, k1=DEFAULT_K1, k2=DEFAULT_K2) -> float:
    return float(_Neighbourhood(X, Z).rre(k1, k2))


def trust(X, Z, k1=DEFAULT_K1, k2=DEFAULT_K2) -> float:
    return _Neighbourhood(X, Z).trust(k1, k2)


def cont(X, Z, k1=DEFAULT_K1, k2=DEFAULT_K2) -> float:
    return _Neighbourhood(X, Z).cont(k1, k2)


def d_rmse(X, Z) -> float:
    return _Neighbourhood(X, Z).d_rmse()


def lgd(X, Z, k1=DEFAULT_K1, k2=DEFAULT_K2) -> float:
    """Local geometric distortion over input-space kNN pairs.

    sum_k sqrt( sum_i sum_{j in kNN_X(i)} (d_X - d_Z)^2 / ((k2-k1+1)^2 N k) )
    """
    return _Neighbourhood(X, Z).lgd(k1, k2)


def cra(X, Z, assignments, C=None) -> float:
    """Fraction of the C*C ordered centre pairs whose closeness rank is
    the same in X and Z (diagonal pairs always agree)."""
    X, Z = _pair(X, Z)
    s = np.asarray(assignments, dtype=np.int64)
    C = int(s.max()) + 1 if C is None else int(C)
    if C < 2:
        raise MetricError("CRA needs at least two clusters")
    vx = manifold_centers(X, s, C)
    vz = manifold_centers(Z, s, C)
    if not vx.all_valid:
        raise MetricError(f"clusters {np.flatnonzero(~vx.valid).tolist()} are empty; centre undefined")
    rx = ranks(pairwise_dist(vx.centers))
    rz = ranks(pairwise_dist(vz.centers))
    return float((rx == rz).sum()) / float(C * C)


def evaluate_all(X, Z, true_labels, pred_labels, k1=DEFAULT_K1, k2=DEFAULT_K2, cra_labels=None) -> MetricsReport:
    """All eight metrics.

    CRA uses ``cra_labels`` if given, else the true labels when available,
    else the predictions.
    """
    nb = _Neighbourhood(X, Z)
    k1, k2 = default_k_range(nb.n, k1, k2)
    if true_labels is None:
        a = n_ = float("nan")
        groups = pred_labels if cra_labels is None else cra_labels
    else:
        a = acc(true_labels, pred_labels)
        n_ = nmi(true_labels, pred_labels)
        groups = true_labels if cra_labels is None else cra_labels
    return MetricsReport(
        acc=a,
        nmi=n_,
        rre=float(nb.rre(k1, k2)),
        trust=nb.trust(k1, k2),
        cont=nb.cont(k1, k2),
        d_rmse=nb.d_rmse(),
        lgd=nb.lgd(k1, k2),
        cra=cra(X, Z, groups),
        k1=k1,
        k2=k2,
    )
