import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from debclust.gradcheck import finite_diff_grad, relative_error
from debclust.lambda_analysis import (DEFAULT_LAMBDAS, LambdaScene, eta, lambda_grad, lambda_hess, lambda_loss,
                                      limit_orthogonal_negatives, negative_base, positive_term, sweep)

E2 = math.exp(2.0)
SCENE = LambdaScene(1.0, (0.0, 0.0), tau=0.5, lam=1.0)


def random_scene(rng) -> LambdaScene:
    n = int(rng.integers(2, 9))
    return LambdaScene(float(rng.uniform(-1, 1)), tuple(rng.uniform(-1, 1, 2 * n - 2)),
                       tau=float(rng.uniform(0.2, 1.0)), lam=float(rng.uniform(0, 5)))


def test_scene_validation():
    with pytest.raises(ValueError):
        LambdaScene(1.0, (0.0,))
    with pytest.raises(ValueError):
        LambdaScene(1.5, (0.0, 0.0))
    with pytest.raises(ValueError):
        LambdaScene(1.0, (0.0, 0.0), tau=0.0)
    assert LambdaScene(0.0, (0.0,) * 6).batch_size == 4


def test_loss_example():
    assert abs(lambda_loss(SCENE) - math.log((E2 + 3) / E2)) < 1e-12
    assert abs(lambda_loss(SCENE) - 0.34085) < 1e-4


def test_lambda_zero_ignores_negatives():
    p = positive_term(SCENE)
    for negs in ((0.0, 0.0), (0.9, -0.4), (1.0, 1.0, -1.0, 0.3)):
        s = LambdaScene(1.0, negs, lam=0.0)
        assert abs(lambda_loss(s) - math.log((p + 1) / p)) < 1e-12


def test_loss_lower_bound():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = random_scene(rng)
        p = positive_term(s)
        assert negative_base(s) > 1
        if s.lam > 0:
            assert lambda_loss(s) > math.log((p + 1) / p)


def test_grad_and_hess_examples():
    assert abs(lambda_grad(SCENE) - 3 * math.log(3) / (E2 + 3)) < 1e-12
    assert abs(lambda_grad(SCENE) - 0.31716) < 1e-4
    assert abs(lambda_hess(SCENE) - E2 * 3 * math.log(3) ** 2 / (E2 + 3) ** 2) < 1e-12
    assert abs(lambda_hess(SCENE) - 0.24790) < 1e-4


def test_grad_vanishes_as_base_approaches_one():
    # all negatives anti-aligned with a tiny temperature drives B to 1
    s = LambdaScene(1.0, (-1.0, -1.0), tau=0.02, lam=1.0)
    assert lambda_grad(s) < 1e-20


def test_hess_vanishes_for_dominant_positive():
    s = LambdaScene(1.0, (0.0, 0.0), tau=0.01, lam=1.0)
    assert lambda_hess(s) < 1e-30


def test_limit_examples():
    assert abs(limit_orthogonal_negatives(2, 1.0, 0.5, 1.0) - 0.24790) < 1e-4
    assert limit_orthogonal_negatives(2, 1.0, 0.5, 1.0) == pytest.approx(lambda_hess(SCENE), rel=1e-14)
    expected = E2 * math.log(3) ** 2 / (E2 + 1) ** 2
    assert abs(limit_orthogonal_negatives(2, 1.0, 0.5, 0.0) - expected) < 1e-12
    assert abs(limit_orthogonal_negatives(2, 1.0, 0.5, 0.0) - 0.12671) < 1e-3
    with pytest.raises(ValueError):
        limit_orthogonal_negatives(1, 1.0, 0.5, 1.0)


def test_closed_forms_match_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(50):
        s = random_scene(rng)
        num_grad = finite_diff_grad(lambda lam: lambda_loss(s.with_lam(float(lam))), s.lam)
        num_hess = finite_diff_grad(lambda lam: lambda_grad(s.with_lam(float(lam))), s.lam)
        assert relative_error(lambda_grad(s), num_grad) < 1e-6
        assert relative_error(lambda_hess(s), num_hess) < 1e-4


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 1), st.lists(st.floats(-1, 1), min_size=1, max_size=8),
       st.floats(0.1, 2.0), st.floats(0, 6))
def test_hessian_is_positive(sim_pos, half_negs, tau, lam):
    negs = tuple(half_negs) * 2
    s = LambdaScene(sim_pos, negs, tau=tau, lam=lam)
    assert lambda_grad(s) > 0
    assert lambda_hess(s) > 0


def test_eta_exceeds_orthogonal_base_for_positive_negatives():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        s = LambdaScene(float(rng.uniform(-1, 1)), tuple(rng.uniform(0.01, 1, 2 * n - 2)))
        assert eta(s) > 2 * n - 1
        assert eta(s) == negative_base(s)


def test_sweep_rows_increase():
    rows = sweep(SCENE, DEFAULT_LAMBDAS)
    assert [r[0] for r in rows] == list(DEFAULT_LAMBDAS)
    losses = [r[1] for r in rows]
    assert all(b > a for a, b in zip(losses, losses[1:]))
    assert all(r[2] > 0 and r[3] > 0 for r in rows)
