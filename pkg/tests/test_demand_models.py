import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copp.demand_models import (
    FULL_GRID,
    SHARED_FOLLOWER_MARGIN,
    FollowerModel,
    ProductEconomics,
    ProductModel,
    SearchCapacityError,
    brute_force_argmax,
    follower_optimistic_demand,
    independent_objective,
    joint_argmax,
    optimistic_demand,
    set_objective,
)
from copp.kernel_gp import GPPosterior, KernelConfig, posterior, posterior_from_arrays, prior

GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
M = len(GRID)
KC = KernelConfig(0.3)


def fake_post(mean, var):
    return GPPosterior(GRID, np.asarray(mean, float), np.asarray(var, float), 0.0, np.ones(M, bool))


def product(name="l", cost=5.0, mean=(0.8, 0.7, 0.5, 0.3, 0.1), var=0.0, beta_=0.0, n_hat=100):
    return ProductModel(ProductEconomics(name, cost), GRID, fake_post(mean, np.full(M, var)), beta_, n_hat)


def follower(name="f", cost=3.0, p_hat=1.0, d_with=(0.9, 0.8, 0.6, 0.4, 0.2), d_without=(0.5, 0.4, 0.3, 0.2, 0.1),
             n_hat=100):
    zero = np.zeros(M)
    return FollowerModel(ProductEconomics(name, cost), GRID, p_hat, fake_post(d_with, zero), 0.0,
                         fake_post(d_without, zero), 0.0, n_hat)


random_curve = st.lists(st.floats(0, 1), min_size=M, max_size=M).map(lambda v: tuple(sorted(v, reverse=True)))


def test_optimistic_demand_no_exploration():
    post = fake_post([0.2] * M, [0.3] * M)
    np.testing.assert_array_equal(optimistic_demand(post, 0.0), post.mean)


def test_optimistic_demand_certain():
    post = fake_post([0.2, 0.4, 0.1, 0.0, 0.3], [0.0] * M)
    np.testing.assert_array_equal(optimistic_demand(post, 5.0), post.mean)


def test_optimistic_demand_prior():
    np.testing.assert_array_equal(optimistic_demand(prior(GRID, KC), 2.0), np.full(M, 2.0))


def test_independent_objective_arithmetic():
    econ = ProductEconomics("p", 10.0)
    f = independent_objective(econ, np.full(M, 0.4), 100, GRID)
    assert f[2] == pytest.approx(200.0)


def test_independent_objective_zero_rate():
    assert np.all(independent_objective(ProductEconomics("p", 10.0), np.full(M, 0.4), 0, GRID) == 0)


def test_revenue_variant_shifts_margin():
    f = independent_objective(ProductEconomics("p", 10.0, alpha=1.0), np.full(M, 0.4), 100, GRID)
    np.testing.assert_allclose(f, (np.array(GRID) + 1) * 10 * 0.4 * 100)


def test_objective_clamps_optimism():
    f = independent_objective(ProductEconomics("p", 1.0), np.full(M, 2.0), 1, GRID)
    np.testing.assert_allclose(f, GRID)


@pytest.mark.parametrize(
    "p_hat, mu, expected",
    [(0.0, 0.7, 0.2), (1.0, 1.0, 0.8), (1.0, 0.5, 0.5)],
)
def test_follower_mixture(p_hat, mu, expected):
    assert follower_optimistic_demand(p_hat, mu, 0.8, 0.2) == pytest.approx(expected)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_follower_demand_between_components(p, mu, a, b):
    d = follower_optimistic_demand(p, mu, a, b)
    assert min(a, b) - 1e-12 <= d <= max(a, b) + 1e-12


def test_set_objective_without_followers():
    lm = product()
    assert set_objective(lm, [], [0.5]) == pytest.approx(lm.objective()[2])


def test_set_objective_term_by_term():
    # leader: cost 5, mean 0.5 at m=0.5; follower cost 3, p=0.6
    lm = product()
    fm = follower(p_hat=0.6)
    expected = 0.5 * 5 * 0.5 * 100 + 0.3 * 3 * (0.6 * 0.5 * 0.8 + (0.4 + 0.6 * 0.5) * 0.4) * 100
    assert set_objective(lm, [fm], [0.5, 0.3]) == pytest.approx(expected)


def test_set_objective_symmetric_in_identical_followers():
    lm = product()
    f1, f2 = follower("a"), follower("b")
    assert set_objective(lm, [f1, f2], [0.3, 0.5, 0.9]) == pytest.approx(set_objective(lm, [f2, f1], [0.3, 0.9, 0.5]))


def test_joint_argmax_no_followers():
    lm = product()
    q = joint_argmax(lm, [])
    assert q.leader_margin == GRID[int(np.argmax(lm.objective()))]


def test_full_and_shared_agree_for_one_follower():
    lm, fm = product(), follower()
    a = joint_argmax(lm, [fm], FULL_GRID)
    b = joint_argmax(lm, [fm], SHARED_FOLLOWER_MARGIN)
    assert a == b


@settings(max_examples=40, deadline=None)
@given(random_curve, random_curve, random_curve, random_curve, st.floats(0, 1), st.floats(0, 1))
def test_full_grid_matches_enumeration_and_beats_shared(ml, w1, w2, wo, p1, p2):
    lm = product(mean=ml)
    fms = [follower("a", 2.0, p1, w1, wo), follower("b", 7.0, p2, w2, wo)]
    full = joint_argmax(lm, fms, FULL_GRID)
    ref = brute_force_argmax(lm, fms)
    assert full.objective_value == pytest.approx(ref.objective_value, rel=1e-12)
    assert full.objective_value >= joint_argmax(lm, fms, SHARED_FOLLOWER_MARGIN).objective_value - 1e-9


def test_joint_argmax_tie_break_lowest_margins():
    flat = product(mean=(0.0,) * M)
    q = joint_argmax(flat, [follower(d_with=(0.0,) * M, d_without=(0.0,) * M)])
    assert q.leader_margin == 0.1 and q.follower_margins == (0.1,)


def test_full_grid_capacity():
    lm = product()
    with pytest.raises(SearchCapacityError):
        joint_argmax(lm, [follower(str(i)) for i in range(6)], FULL_GRID, cap=6)
    q = joint_argmax(lm, [follower(str(i)) for i in range(6)], SHARED_FOLLOWER_MARGIN)
    assert len(set(q.follower_margins)) == 1


def test_cold_start_explores_max_variance():
    post = posterior_from_arrays(GRID, np.zeros(M), np.zeros(M), KC)
    pm = ProductModel(ProductEconomics("p", 1.0), GRID, post, 1.0, 0.0)
    assert pm.best_margin_index() == 0


def test_leader_discount_found_when_follower_pays():
    # leader alone prefers 0.9; a valuable follower makes a lower leader margin worth it
    lm = product(cost=1.0, mean=(0.6, 0.55, 0.5, 0.45, 0.4))
    fm = follower(cost=20.0, d_with=(0.9,) * M, d_without=(0.1,) * M)
    assert lm.objective().argmax() == M - 1
    assert joint_argmax(lm, [fm]).leader_margin < 0.9


def test_posterior_driven_model_runs():
    c_n = np.array([100, 100, 0, 0, 0])
    post = posterior_from_arrays(GRID, c_n, np.array([60, 40, 0, 0, 0]), KC)
    pm = ProductModel(ProductEconomics("p", 2.0), GRID, post, 1.0, 100)
    assert pm.objective().shape == (M,)
    assert np.all(pm.objective() >= 0)
