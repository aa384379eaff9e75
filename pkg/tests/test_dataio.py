import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcrl.clusterhead import kmeans
from dcrl.dataio import (
    Dataset,
    SplitSpec,
    blob_centers,
    export_csv,
    export_idx,
    gen_blobs,
    gen_intersecting_manifolds,
    load_csv,
    load_idx,
    split,
    zscore,
)
from dcrl.errors import DataError, FormatError, ParseError
from dcrl.geometry import knn, pairwise_dist
from dcrl.metrics import acc


def _idx_images(path, pixels, count, rows, cols, magic=0x803):
    path.write_bytes(struct.pack(">IIII", magic, count, rows, cols) + bytes(pixels))
    return path


def _idx_labels(path, labels, magic=0x801):
    path.write_bytes(struct.pack(">II", magic, len(labels)) + bytes(labels))
    return path


# -- IDX ---------------------------------------------------------------------

def test_idx_handcrafted_image(tmp_path):
    img = _idx_images(tmp_path / "img", [0, 128, 255, 64], 1, 2, 2)
    lbl = _idx_labels(tmp_path / "lbl", [7])
    ds = load_idx(img, lbl)
    assert np.array_equal(ds.x, [[0.0, 128 / 255, 1.0, 64 / 255]])
    assert ds.labels.tolist() == [7]


def test_idx_bad_magic_names_offset(tmp_path):
    img = _idx_images(tmp_path / "img", [0] * 4, 1, 2, 2, magic=0x1234)
    with pytest.raises(FormatError, match="offset 0"):
        load_idx(img)


def test_idx_empty_file_rejected(tmp_path):
    with pytest.raises(FormatError, match="count is 0"):
        load_idx(_idx_images(tmp_path / "img", [], 0, 2, 2))


def test_idx_truncated(tmp_path):
    with pytest.raises(FormatError, match="offset"):
        load_idx(_idx_images(tmp_path / "img", [1, 2, 3], 1, 2, 2))
    (tmp_path / "short").write_bytes(b"\x00\x00\x08")
    with pytest.raises(FormatError, match="offset 3"):
        load_idx(tmp_path / "short")


def test_idx_count_mismatch(tmp_path):
    img = _idx_images(tmp_path / "img", [0] * 8, 2, 2, 2)
    lbl = _idx_labels(tmp_path / "lbl", [1])
    with pytest.raises(FormatError, match="offset 4"):
        load_idx(img, lbl)


def test_idx_round_trip(tmp_path, rng):
    pix = rng.integers(0, 256, (5, 6)) / 255.0
    ds = Dataset(pix, rng.integers(0, 3, 5))
    export_idx(ds, tmp_path / "i", tmp_path / "l", shape=(2, 3))
    back = load_idx(tmp_path / "i", tmp_path / "l")
    assert np.array_equal(back.x, ds.x) and np.array_equal(back.labels, ds.labels)


# -- CSV ---------------------------------------------------------------------

def test_csv_with_labels(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2,0\n3,4,1\n")
    ds = load_csv(p, has_label_column=True)
    assert ds.x.tolist() == [[1, 2], [3, 4]] and ds.labels.tolist() == [0, 1]


def test_csv_ragged_row_names_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises(ParseError, match="line 2"):
        load_csv(p)


def test_csv_non_numeric_names_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n1,x\n")
    with pytest.raises(ParseError, match="line 3"):
        load_csv(p, has_header=True)


def test_csv_round_trip_is_exact(tmp_path, rng):
    ds = Dataset(rng.standard_normal((10, 3)), np.arange(10) % 2)
    export_csv(ds, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", has_label_column=True, has_header=True)
    assert np.array_equal(back.x, ds.x) and np.array_equal(back.labels, ds.labels)


# -- transforms --------------------------------------------------------------

def test_zscore_examples(rng):
    ds = zscore(Dataset(np.array([[0.0, 5.0], [2.0, 5.0]])))
    assert ds.x.tolist() == [[-1.0, 0.0], [1.0, 0.0]]
    big = zscore(Dataset(rng.standard_normal((50, 4)) * 3 + 7))
    assert np.all(np.abs(big.x.mean(axis=0)) < 1e-12)
    assert np.allclose(big.x.std(axis=0), 1.0)


def test_split_balanced_halves():
    ds = Dataset(np.arange(10.0)[:, None], np.arange(10) % 2)
    tr, te = split(ds, SplitSpec(0.5, seed=0))
    assert len(tr) == len(te) == 5
    assert abs(int(tr.labels.sum()) - (5 - int(tr.labels.sum()))) <= 1


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 60), st.floats(0.1, 0.9), st.integers(0, 5), st.integers(2, 4))
def test_split_properties(n, frac, seed, C):
    ds = Dataset(np.arange(float(n))[:, None], np.arange(n) % C, num_classes=C)
    try:
        tr, te = split(ds, SplitSpec(frac, seed))
    except ValueError:
        return  # one side would be empty
    ids = sorted(tr.x[:, 0].tolist() + te.x[:, 0].tolist())
    assert ids == list(range(n))
    for c in range(C):
        total = int(np.sum(ds.labels == c))
        assert abs(int(np.sum(tr.labels == c)) - frac * total) <= 1 + 1e-9


def test_split_seeded():
    ds = Dataset(np.arange(40.0)[:, None], np.arange(40) % 4)
    a = split(ds, SplitSpec(0.7, 1))
    b = split(ds, SplitSpec(0.7, 1))
    c = split(ds, SplitSpec(0.7, 2))
    assert np.array_equal(a[0].x, b[0].x)
    assert not np.array_equal(a[0].x, c[0].x)


def test_split_rejects_empty_side():
    ds = Dataset(np.arange(3.0)[:, None])
    with pytest.raises(ValueError):
        split(ds, SplitSpec(0.1))
    with pytest.raises(ValueError):
        SplitSpec(1.0)


# -- generators --------------------------------------------------------------

def test_blobs_deterministic_and_limit():
    a, b = gen_blobs(20, 3, 4, 1.0, seed=2), gen_blobs(20, 3, 4, 1.0, seed=2)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.labels, b.labels)
    flat = gen_blobs(5, 3, 4, 0.0, seed=2)
    assert np.array_equal(flat.x, blob_centers(3, 4, seed=2)[flat.labels])


def test_blobs_small_spread_kmeans_accuracy():
    ds = gen_blobs(100, 4, 10, 0.5, seed=0)
    assert acc(ds.labels, kmeans(ds.x, 4)[1]) >= 0.99


def test_manifolds_shape_and_determinism():
    ds = gen_intersecting_manifolds(50, 4, seed=1)
    assert ds.x.shape == (200, 3) and sorted(set(ds.labels.tolist())) == [0, 1, 2, 3]
    assert np.array_equal(ds.x, gen_intersecting_manifolds(50, 4, seed=1).x)
    with pytest.raises(ValueError):
        gen_intersecting_manifolds(10, 9)


def test_two_rings_overlap_in_knn():
    ds = gen_intersecting_manifolds(200, 2, seed=0)
    g = knn(pairwise_dist(ds.x), 1)
    cross = ds.labels[g.indices[:, 0]] != ds.labels
    assert cross.any()


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan]]))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), [0])
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), [0, 3], num_classes=2)
