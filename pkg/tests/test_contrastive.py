import math

import numpy as np
import pytest

from debclust import autodiff as ad
from debclust.autodiff import Tensor
from debclust.contrastive import (ContrastiveConfig, ViewBatch, batch_loss, clamp_margins, cosine_sim,
                                  debiased_distance, loss_oracle_scalar, neg_mean, sample_loss, sample_losses)
from debclust.gradcheck import finite_diff_grad, relative_error

CFG = ContrastiveConfig(tau=0.5, tau_plus=0.1, lam=2.0)
E2 = math.exp(2.0)

# two samples whose views coincide and are orthogonal to each other
ORTHO = ViewBatch(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]))


def random_batch(rng, n=None, d=None):
    n = n or int(rng.integers(2, 9))
    d = d or int(rng.integers(2, 17))
    return ViewBatch(rng.standard_normal((n, d)), rng.standard_normal((n, d)))


def test_cosine_examples():
    assert cosine_sim([1, 0], [1, 0]) == 1.0
    assert cosine_sim([1, 0], [0, 1]) == 0.0
    assert abs(cosine_sim([1, 1], [1, 0]) - 0.70711) < 1e-5
    with pytest.raises(ValueError):
        cosine_sim([0, 0], [1, 0])


def test_config_validation():
    with pytest.raises(ValueError):
        ContrastiveConfig(tau_plus=1.0)
    with pytest.raises(ValueError):
        ContrastiveConfig(tau=0.0)
    with pytest.raises(ValueError):
        ContrastiveConfig(lam=-1.0)


def test_view_batch_rejects_small_or_degenerate():
    with pytest.raises(ValueError):
        ViewBatch(np.ones((1, 3)), np.ones((1, 3)))
    with pytest.raises(ad.ShapeError):
        ViewBatch(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(ValueError):
        ViewBatch(np.array([[0.0, 0.0], [1.0, 0.0]]), np.ones((2, 2)))


def test_neg_mean_examples():
    assert abs(neg_mean(ORTHO, 0, 1, CFG) - 1.0) < 1e-12
    mixed = ViewBatch(np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert abs(neg_mean(mixed, 0, 1, CFG) - (E2 + 1) / 2) < 1e-12
    assert abs(neg_mean(mixed, 0, 1, CFG) - 4.19453) < 1e-5
    aligned = ViewBatch(np.ones((2, 2)), np.ones((2, 2)))
    assert abs(neg_mean(aligned, 1, 2, CFG) - 7.38906) < 1e-5


def test_debiased_distance_examples():
    per_view = (1 - 0.1 * E2) / 0.9
    assert abs(per_view - 0.29012) < 1e-4
    assert abs(debiased_distance(ORTHO, 0, CFG) - 2 * per_view) < 1e-12
    # the hand value 0.58025 carries rounding from the per-view term
    assert abs(debiased_distance(ORTHO, 0, CFG) - 0.58025) < 1e-4

    anti = ViewBatch(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert np.all(clamp_margins(anti, CFG) < 0)
    assert abs(debiased_distance(anti, 0, CFG) - 2 * math.exp(-2.0)) < 1e-12
    assert abs(debiased_distance(anti, 0, CFG) - 0.27067) < 1e-5


def test_distance_floor_on_random_batches():
    rng = np.random.default_rng(11)
    for _ in range(30):
        b = random_batch(rng)
        cfg = ContrastiveConfig(tau=float(rng.uniform(0.1, 1.0)), tau_plus=float(rng.uniform(0, 0.5)))
        for i in range(b.n):
            assert debiased_distance(b, i, cfg) >= 2 * math.exp(-1 / cfg.tau) - 1e-15


def test_sample_loss_example():
    d = debiased_distance(ORTHO, 0, CFG)
    expected = -2 * math.log(E2 / (E2 + (1 + d) ** 2))
    value = sample_loss(ORTHO, 0, CFG).item()
    assert abs(value - expected) < 1e-12
    # exact value; the rounded hand figure 0.58237 used D = 0.58025
    assert abs(value - 0.582263) < 1e-6


def test_sample_loss_lambda_zero_ignores_distance():
    cfg = ContrastiveConfig(lam=0.0)
    assert abs(sample_loss(ORTHO, 0, cfg).item() - 0.25386) < 1e-5
    anti = ViewBatch(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert abs(sample_loss(anti, 0, cfg).item() - sample_loss(ORTHO, 0, cfg).item()) < 1e-12


def test_sample_loss_vanishes_for_small_temperature():
    losses = [sample_loss(ORTHO, 0, ContrastiveConfig(tau=t, tau_plus=0.0)).item() for t in (0.5, 0.1, 0.02)]
    assert losses[0] > losses[1] > losses[2]
    assert losses[2] < 1e-15


def test_batch_loss_examples():
    assert abs(batch_loss(ORTHO, CFG).item() - sample_loss(ORTHO, 0, CFG).item() / 2) < 1e-12
    assert abs(batch_loss(ORTHO, CFG).item() - 0.29118) < 1e-4


def test_batch_loss_is_half_mean_of_sample_losses():
    rng = np.random.default_rng(2)
    b = random_batch(rng, 5, 6)
    losses = sample_losses(b, CFG).data
    assert abs(batch_loss(b, CFG).item() - losses.sum() / (2 * b.n)) < 1e-12


def test_batch_loss_permutation_invariant():
    rng = np.random.default_rng(4)
    for _ in range(10):
        b = random_batch(rng)
        perm = rng.permutation(b.n)
        shuffled = ViewBatch(b.z1[perm], b.z2[perm])
        assert abs(batch_loss(b, CFG).item() - batch_loss(shuffled, CFG).item()) < 1e-12


def test_batch_loss_scale_invariant():
    rng = np.random.default_rng(5)
    b = random_batch(rng, 4, 5)
    scaled = ViewBatch(3.7 * b.z1, 0.2 * b.z2)
    assert abs(batch_loss(b, CFG).item() - batch_loss(scaled, CFG).item()) < 1e-12


def test_oracle_matches_vectorised_loss():
    rng = np.random.default_rng(0)
    for _ in range(50):
        b = random_batch(rng, 3, 4)
        cfg = ContrastiveConfig(tau=float(rng.uniform(0.1, 1.0)), tau_plus=float(rng.uniform(0, 0.9)),
                                lam=float(rng.uniform(0, 5)))
        assert abs(loss_oracle_scalar(b, cfg) - batch_loss(b, cfg).item()) < 1e-10
    assert abs(loss_oracle_scalar(ORTHO, CFG) - 0.29118) < 1e-4
    assert loss_oracle_scalar(ORTHO, CFG) == pytest.approx(batch_loss(ORTHO, CFG).item(), abs=1e-15)


def test_monotone_and_convex_in_lambda():
    rng = np.random.default_rng(7)
    lams = (0.0, 0.5, 1.0, 2.0, 3.0, 5.0)
    for _ in range(20):
        b = random_batch(rng)
        vals = [batch_loss(b, ContrastiveConfig(lam=lam)).item() for lam in lams]
        assert all(np.diff(vals) > 0)
        slopes = np.diff(vals) / np.diff(lams)
        assert all(np.diff(slopes) > 0)


def test_gradient_with_respect_to_both_views():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(20):
        n, d = 4, 8
        z1, z2 = rng.standard_normal((n, d)), rng.standard_normal((n, d))
        if np.abs(clamp_margins(ViewBatch(z1, z2), CFG)).min() < 1e-3:
            continue
        t1, t2 = Tensor(z1, requires_grad=True), Tensor(z2, requires_grad=True)
        gm = ad.backward(batch_loss(ViewBatch(t1, t2), CFG))
        n1 = finite_diff_grad(lambda v: batch_loss(ViewBatch(v, z2), CFG).item(), z1)
        n2 = finite_diff_grad(lambda v: batch_loss(ViewBatch(z1, v), CFG).item(), z2)
        worst = max(worst, relative_error(gm[t1], n1), relative_error(gm[t2], n2))
    assert worst < 1e-5
