import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import adjusted_rand_score

from debclust import autodiff as ad
from debclust.autodiff import Tensor
from debclust.clustering import ClusterState, kl_loss, kmeans, kmeans_init, soft_assign, target_distribution
from debclust.evaluation import adjusted_rand_index
from debclust.gradcheck import finite_diff_grad, relative_error


def three_blobs(seed):
    rng = np.random.default_rng(seed)
    means = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    x = np.concatenate([m + 0.1 * rng.standard_normal((100, 2)) for m in means])
    return x, np.repeat(np.arange(3), 100)


def test_kmeans_two_points():
    c, labels = kmeans(np.array([[1.0], [-1.0]]), 2, seed=0)
    np.testing.assert_array_equal(c, [[-1.0], [1.0]])
    np.testing.assert_array_equal(labels, [1, 0])


def test_kmeans_k_equals_n():
    x = np.random.default_rng(0).standard_normal((6, 3))
    c, labels = kmeans(x, 6, seed=3)
    np.testing.assert_array_equal(np.sort(c, axis=0), np.sort(x, axis=0))
    assert len(set(labels.tolist())) == 6


def test_kmeans_rejects_too_few_points():
    with pytest.raises(ValueError):
        kmeans(np.ones((2, 2)), 3)
    with pytest.raises(ValueError):
        kmeans(np.ones((5, 2)), 2)


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_recovers_blobs(seed):
    x, y = three_blobs(seed)
    _, labels = kmeans(x, 3, seed=seed)
    assert adjusted_rand_index(y, labels) > 0.99


def test_kmeans_is_deterministic():
    x, _ = three_blobs(0)
    a = kmeans(x, 3, seed=4)
    b = kmeans(x, 3, seed=4)
    assert a[0].tobytes() == b[0].tobytes()
    np.testing.assert_array_equal(a[1], b[1])


def test_cluster_state_validation():
    with pytest.raises(ValueError):
        ClusterState(np.ones((1, 2)))
    with pytest.raises(ValueError):
        ClusterState(np.array([[0.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        ClusterState(np.eye(2), alpha=0.0)
    assert kmeans_init(three_blobs(0)[0], 3).k == 3


def test_soft_assign_examples():
    q = soft_assign(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0], [-1.0, 0.0]])).data
    np.testing.assert_allclose(q, [[0.5, 0.5]], atol=1e-15)
    q = soft_assign(np.array([[0.0]]), ClusterState(np.array([[0.0], [1.0]]), alpha=1.0)).data
    np.testing.assert_allclose(q, [[2 / 3, 1 / 3]], atol=1e-15)


def test_soft_assign_shape_error():
    with pytest.raises(ad.ShapeError):
        soft_assign(np.ones((3, 2)), np.ones((2, 3)))


def test_target_examples():
    q = np.tile([2 / 3, 1 / 3], (5, 1))
    np.testing.assert_allclose(target_distribution(q), q, atol=1e-12)
    onehot = np.eye(3)[[0, 1, 2, 1, 0]]
    np.testing.assert_allclose(target_distribution(onehot), onehot, atol=1e-15)


def test_target_rejects_empty_cluster():
    with pytest.raises(ValueError, match="cluster 1"):
        target_distribution(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))


def test_kl_examples():
    assert kl_loss(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])).item() == pytest.approx(math.log(2), abs=1e-6)
    q = np.array([[0.3, 0.7], [0.9, 0.1]])
    assert kl_loss(q, q).item() == 0.0
    with pytest.raises(ValueError):
        kl_loss(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]))


def embeddings_and_centroids():
    return st.tuples(st.integers(1, 12), st.integers(2, 5), st.integers(1, 6)).flatmap(
        lambda s: st.tuples(arrays(np.float64, (s[0], s[2]), elements=st.floats(-20, 20)),
                            arrays(np.float64, (s[1], s[2]), elements=st.floats(-20, 20), unique=False),
                            st.floats(0.2, 5.0)))


@settings(max_examples=200, deadline=None)
@given(embeddings_and_centroids())
def test_rows_are_distributions(case):
    z, mu, alpha = case
    q = soft_assign(z, mu, alpha).data
    assert np.all(q > 0)
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-9)
    p = target_distribution(q)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    kl = kl_loss(p, q).item()
    assert kl >= -1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(0.01, 1.0)))
def test_kl_zero_iff_equal(raw):
    q = raw / raw.sum(axis=1, keepdims=True)
    assert abs(kl_loss(q, q).item()) < 1e-12
    p = target_distribution(q)
    if np.abs(p - q).max() > 1e-6:
        assert kl_loss(p, q).item() > 0


def test_soft_assign_permutation_equivariant():
    rng = np.random.default_rng(0)
    z, mu = rng.standard_normal((7, 3)), rng.standard_normal((4, 3))
    rows, cols = rng.permutation(7), rng.permutation(4)
    q = soft_assign(z, mu).data
    np.testing.assert_allclose(soft_assign(z[rows], mu[cols]).data, q[rows][:, cols], atol=1e-15)
    p = target_distribution(q)
    np.testing.assert_allclose(target_distribution(q[rows][:, cols]), p[rows][:, cols], atol=1e-15)


def test_kl_gradients_for_embeddings_and_centroids():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        n, k, d = int(rng.integers(2, 9)), int(rng.integers(2, 5)), int(rng.integers(2, 9))
        z, mu = rng.standard_normal((n, d)), rng.standard_normal((k, d))
        alpha = float(rng.uniform(0.5, 2.0))
        p = target_distribution(soft_assign(z, mu, alpha))
        tz, tmu = Tensor(z, requires_grad=True), Tensor(mu, requires_grad=True)
        gm = ad.backward(kl_loss(p, soft_assign(tz, tmu, alpha)))
        nz = finite_diff_grad(lambda v: kl_loss(p, soft_assign(v, mu, alpha)).item(), z)
        nmu = finite_diff_grad(lambda v: kl_loss(p, soft_assign(z, v, alpha)).item(), mu)
        worst = max(worst, relative_error(gm[tz], nz), relative_error(gm[tmu], nmu))
    assert worst < 1e-5


def test_ari_agrees_with_sklearn():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b = rng.integers(0, 4, 50), rng.integers(0, 3, 50)
        assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
