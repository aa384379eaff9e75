import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dcrl import losses
from dcrl import ndtensor as nd
from dcrl.geometry import ManifoldCenters, knn, pairwise_dist
from oracles import central_diff, dist, rel_err

mats = arrays(np.float64, (4, 3), elements=st.floats(-5, 5, allow_subnormal=False))


def _graph_case(rng, n=30, k=5, C=3):
    x = rng.standard_normal((n, 6))
    z = rng.standard_normal((n, 3))
    s = rng.integers(0, C, n)
    g = knn(pairwise_dist(z), k)
    return x, z, s, g


def test_lis_matches_loop_oracle(rng):
    x, z, s, g = _graph_case(rng)
    ref = 0.0
    for i in range(len(x)):
        for j in g.indices[i]:
            if s[i] == s[j]:
                ref += abs(dist(x[i], x[j]) - dist(z[i], z[j]))
    assert losses.lis_loss(x, z, g, s) == pytest.approx(ref, rel=1e-12)


def test_lis_gradient_matches_finite_differences(rng):
    x, z, s, g = _graph_case(rng)
    same = losses.same_cluster_mask(g, s)
    dx = losses.graph_pair_distances(x, g)
    zt = nd.Tensor(z, requires_grad=True)
    nd.backward(losses.lis_loss_t(zt, g, same, dx))
    fd = central_diff(lambda v: losses.lis_loss(x, v, g, s), z)
    assert rel_err(zt.grad, fd) < 1e-6


def test_lis_vanishes_on_isometric_embedding(rng):
    x = rng.standard_normal((20, 3))
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    z = x @ q + 4.0
    g = knn(pairwise_dist(z), 4)
    assert losses.lis_loss(x, z, g, np.zeros(20, int)) < 1e-10


def test_lis_ignores_cross_cluster_edges(rng):
    x, z, _, g = _graph_case(rng)
    assert losses.lis_loss(x, z, g, np.arange(len(x))) == 0.0


def test_rank_loss_and_gradient(rng):
    mu = rng.standard_normal((4, 5))
    vx = rng.standard_normal((4, 6))
    g = losses.grad_centers_rank(mu, vx, 3.0)
    fd = central_diff(lambda m: losses.rank_loss(m, vx, 3.0), mu)
    assert rel_err(g, fd) < 1e-6


def test_rank_loss_zero_when_kappa_isometric(rng):
    vx = rng.standard_normal((4, 3))
    assert losses.rank_loss(3.0 * vx, vx, 3.0) < 1e-12


def test_rank_loss_counts_ordered_pairs():
    mu = np.array([[0.0, 0.0], [1.0, 0.0]])
    vx = np.zeros((2, 2))
    assert losses.rank_loss(mu, vx, 3.0) == pytest.approx(2.0)


def test_align_loss_and_gradient(rng):
    mu = rng.standard_normal((4, 5))
    vz = rng.standard_normal((4, 5))
    assert losses.align_loss(mu, mu) == 0.0
    g = losses.grad_centers_align(mu, vz)
    fd = central_diff(lambda m: losses.align_loss(m, vz), mu)
    assert rel_err(g, fd) < 1e-6


@settings(max_examples=60, deadline=None)
@given(mats, mats, arrays(np.float64, (1, 3), elements=st.floats(-5, 5)))
def test_align_translation_invariant(mu, vz, shift):
    a = losses.align_loss(mu, vz)
    b = losses.align_loss(mu + shift, vz + shift)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(mats, st.floats(0.5, 4.0))
def test_rank_loss_non_negative(mu, kappa):
    vx = mu[::-1].copy()
    assert losses.rank_loss(mu, vx, kappa) >= 0.0
    assert np.all(np.isfinite(losses.grad_centers_rank(mu, vx, kappa)))


def test_singular_points_get_zero_subgradient():
    mu = np.zeros((3, 2))  # coincident centres
    assert np.array_equal(losses.grad_centers_rank(mu, np.zeros((3, 2)), 3.0), np.zeros((3, 2)))
    assert np.array_equal(losses.grad_centers_align(mu, mu), np.zeros((3, 2)))


def test_invalid_clusters_are_excluded(rng):
    mu = rng.standard_normal((3, 2))
    vz = ManifoldCenters(rng.standard_normal((3, 2)), np.array([True, False, True]), np.array([4, 0, 2]))
    g = losses.grad_centers_align(mu, vz)
    assert np.array_equal(g[1], [0.0, 0.0])
    full = losses.align_loss(mu[[0, 2]], vz.centers[[0, 2]])
    assert losses.align_loss(mu, vz) == pytest.approx(full)
    assert np.array_equal(losses.grad_centers_rank(mu, vz, 3.0)[1], [0.0, 0.0])


def test_sep_loss_value_and_gradient(rng):
    z = rng.standard_normal((8, 2))
    s = np.array([0, 0, 1, 1, 2, 2, 0, 1])
    zt = nd.Tensor(z, requires_grad=True)
    out = losses.sep_loss_t(zt, s)
    assert out.item() == pytest.approx(losses.sep_loss(z, s))
    nd.backward(out)
    assert rel_err(zt.grad, central_diff(lambda v: losses.sep_loss(v, s), z)) < 1e-6
