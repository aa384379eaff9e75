"""Datasets: IDX and CSV readers, normalisation, splitting, synthetic data."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, ParseError
from .ndtensor import as_matrix

IDX_IMAGES_MAGIC = 0x00000803  # 2051
IDX_LABELS_MAGIC = 0x00000801  # 2049


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    labels: np.ndarray | None = None
    name: str = "data"
    num_classes: int | None = None

    def __post_init__(self):
        x = as_matrix(self.x, "x")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError(f"{self.name}: empty data matrix {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError(f"{self.name}: non-finite entries")
        object.__setattr__(self, "x", x)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).ravel()
            if labels.shape[0] != x.shape[0]:
                raise DataError(f"{self.name}: {labels.shape[0]} labels for {x.shape[0]} rows")
            k = self.num_classes if self.num_classes is not None else int(labels.max()) + 1
            if labels.min() < 0 or labels.max() >= k:
                raise DataError(f"{self.name}: labels outside [0, {k})")
            object.__setattr__(self, "labels", labels)
            object.__setattr__(self, "num_classes", int(k))

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx, name=None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.x[idx],
            None if self.labels is None else self.labels[idx],
            name or self.name,
            self.num_classes,
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train fraction must lie strictly in (0, 1), got {self.train_fraction}")


# -- IDX -------------------------------------------------------------------

def _idx_header(buf, path, magic, ndim):
    need = 4 * (1 + ndim)
    if len(buf) < need:
        raise FormatError(f"{path}: truncated header at offset {len(buf)} (need {need} bytes)")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x} at offset 0, expected 0x{magic:08x}")
    return struct.unpack(f">{ndim}I", buf[4:need]), need


def load_idx(images_path, labels_path=None, name=None) -> Dataset:
    """Read an IDX image file (and optionally its label file).

    Pixels are flattened row-major and scaled to [0, 1].
    """
    images_path = Path(images_path)
    buf = images_path.read_bytes()
    (count, rows, cols), off = _idx_header(buf, images_path, IDX_IMAGES_MAGIC, 3)
    if count == 0:
        raise FormatError(f"{images_path}: image count is 0 (offset 4)")
    size = count * rows * cols
    if len(buf) < off + size:
        raise FormatError(f"{images_path}: truncated pixel data at offset {len(buf)}, expected {off + size} bytes")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=size, offset=off)
    x = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        labels_path = Path(labels_path)
        lbuf = labels_path.read_bytes()
        (lcount,), loff = _idx_header(lbuf, labels_path, IDX_LABELS_MAGIC, 1)
        if lcount != count:
            raise FormatError(f"{labels_path}: label count {lcount} at offset 4 does not match image count {count}")
        if len(lbuf) < loff + lcount:
            raise FormatError(f"{labels_path}: truncated label data at offset {len(lbuf)}")
        labels = np.frombuffer(lbuf, dtype=np.uint8, count=lcount, offset=loff).astype(np.int64)
    return Dataset(x, labels, name or images_path.stem)


def export_idx(dataset: Dataset, images_path, labels_path=None, shape=None):
    """Write pixel data (values in [0, 1], multiples of 1/255) as IDX."""
    n, d = dataset.x.shape
    rows, cols = shape if shape is not None else (1, d)
    if rows * cols != d:
        raise ValueError(f"image shape {rows}x{cols} does not hold {d} values")
    pix = np.rint(dataset.x * 255.0)
    if pix.min() < 0 or pix.max() > 255:
        raise ValueError("pixel values outside [0, 1]")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(pix.astype(np.uint8).tobytes())
    if labels_path is not None and dataset.labels is not None:
        with open(labels_path, "wb") as fh:
            fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
            fh.write(dataset.labels.astype(np.uint8).tobytes())


# -- CSV -------------------------------------------------------------------

def load_csv(path, has_label_column=False, has_header=False, name=None) -> Dataset:
    """Numeric CSV; with ``has_label_column`` the last column holds integer labels."""
    path = Path(path)
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"{path}: line {lineno} has {len(row)} fields, expected {width}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ParseError(f"{path}: line {lineno} has a non-numeric field") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    labels = None
    if has_label_column:
        if arr.shape[1] < 2:
            raise ParseError(f"{path}: need at least one feature column besides the label")
        lab = arr[:, -1]
        if not np.all(lab == np.round(lab)):
            bad = int(np.flatnonzero(lab != np.round(lab))[0]) + 1 + int(has_header)
            raise ParseError(f"{path}: line {bad} has a non-integer label")
        labels = lab.astype(np.int64)
        arr = arr[:, :-1]
    return Dataset(arr, labels, name or path.stem)


def export_csv(dataset: Dataset, path, header=True):
    """Columns x0..x{d-1}[,label]; floats written with round-trip precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    d = dataset.dim
    if header:
        writer.writerow([f"x{i}" for i in range(d)] + (["label"] if dataset.labels is not None else []))
    for i, row in enumerate(dataset.x):
        cells = [repr(float(v)) for v in row]
        if dataset.labels is not None:
            cells.append(str(int(dataset.labels[i])))
        writer.writerow(cells)
    Path(path).write_text(buf.getvalue())


# -- transforms ------------------------------------------------------------

def zscore(dataset: Dataset) -> Dataset:
    """Centre every feature; scale to unit variance where the variance is non-zero."""
    x = dataset.x
    centred = x - x.mean(axis=0)
    sd = centred.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    return replace(dataset, x=centred / scale)


def split(dataset: Dataset, spec: SplitSpec):
    """Seeded split; stratified by label when labels are present."""
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least two samples to split")
    rng = np.random.default_rng(spec.seed)
    n_train = int(np.floor(spec.train_fraction * n + 0.5))
    if dataset.labels is None:
        order = rng.permutation(n)
        train_idx, test_idx = order[:n_train], order[n_train:]
    else:
        sizes = np.bincount(dataset.labels, minlength=dataset.num_classes)
        quota = spec.train_fraction * sizes
        cuts = np.floor(quota).astype(np.int64)
        # largest remainder; equal remainders go to the lower class index
        extra = n_train - int(cuts.sum())
        by_remainder = np.argsort(-(quota - cuts), kind="stable")
        cuts[by_remainder[:max(extra, 0)]] += 1
        train_parts, test_parts = [], []
        for c in range(dataset.num_classes):
            members = np.flatnonzero(dataset.labels == c)
            members = members[rng.permutation(members.size)]
            train_parts.append(members[:cuts[c]])
            test_parts.append(members[cuts[c]:])
        train_idx = np.concatenate(train_parts)
        test_idx = np.concatenate(test_parts)
        train_idx = train_idx[rng.permutation(train_idx.size)]
        test_idx = test_idx[rng.permutation(test_idx.size)]
    if train_idx.size == 0 or test_idx.size == 0:
        raise ValueError(f"fraction {spec.train_fraction} leaves one side of the split empty")
    return dataset.subset(train_idx, f"{dataset.name}-train"), dataset.subset(test_idx, f"{dataset.name}-test")


# -- synthetic -------------------------------------------------------------

def gen_blobs(n_per_cluster=200, C=4, dim=10, spread=1.0, seed=0, box=5.0) -> Dataset:
    """Isotropic Gaussian clusters; centres uniform in [-box, box]^dim."""
    if C < 2 or dim < 2:
        raise ValueError("need C >= 2 and dim >= 2")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-box, box, size=(C, dim))
    noise = rng.standard_normal((C * n_per_cluster, dim))
    labels = np.repeat(np.arange(C), n_per_cluster)
    x = centers[labels] + spread * noise
    return Dataset(x, labels, f"blobs-C{C}-d{dim}", C)


def blob_centers(C=4, dim=10, seed=0, box=5.0) -> np.ndarray:
    """The centres :func:`gen_blobs` draws for the same arguments."""
    return np.random.default_rng(seed).uniform(-box, box, size=(C, dim))


def gen_intersecting_manifolds(n_per_manifold=200, C=4, seed=0, noise=0.02) -> Dataset:
    """C rings in 3-D that all pass through the origin.

    Ring j has radius r_j, its centre at r_j * u_j for a random unit
    vector u_j, and lies in the plane spanned by u_j and a random
    direction orthogonal to it. Points are spread evenly in angle with a
    small random phase and isotropic noise, so near the origin every ring
    crosses every other one.
    """
    if not 2 <= C <= 8:
        raise ValueError("C must lie in 2..8")
    rng = np.random.default_rng(seed)
    xs = []
    for j in range(C):
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        w = rng.standard_normal(3)
        w -= (w @ u) * u
        w /= np.linalg.norm(w)
        radius = 1.0 + 0.6 * j / max(C - 1, 1)
        theta = 2 * np.pi * (np.arange(n_per_manifold) + rng.uniform()) / n_per_manifold
        ring = radius * (u[None, :] * (1.0 - np.cos(theta))[:, None] + w[None, :] * np.sin(theta)[:, None])
        xs.append(ring + noise * rng.standard_normal(ring.shape))
    labels = np.repeat(np.arange(C), n_per_manifold)
    return Dataset(np.vstack(xs), labels, f"manifolds-C{C}", C)
