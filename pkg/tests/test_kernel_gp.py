import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copp.ingest import MarginCounters
from copp.kernel_gp import (
    GPConfig,
    InfoGainTracker,
    KernelConfig,
    beta,
    posterior,
    posterior_from_arrays,
    per_round_posterior,
    se_kernel,
    select_lengthscale,
)
from oracles import gp_per_round

GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
K02 = KernelConfig(lengthscale=0.2)


def counters_from(history):
    c = MarginCounters(GRID)
    for m, n, v in history:
        c.add(m, n, v)
    return c


histories = st.lists(
    st.tuples(st.sampled_from(GRID), st.integers(0, 120), st.floats(0, 1)).map(
        lambda t: (t[0], t[1], int(round(t[1] * t[2])))
    ),
    max_size=50,
)


def test_se_kernel_identity():
    assert se_kernel(0.5, 0.5, K02) == 1.0


def test_se_kernel_value():
    assert se_kernel(0.1, 0.3, K02) == pytest.approx(0.6065306597126334, abs=1e-12)


def test_se_kernel_symmetric():
    assert se_kernel(0.1, 0.9, K02) == se_kernel(0.9, 0.1, K02)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.05, 2))
def test_se_kernel_bounded(a, b, ell):
    k = se_kernel(a, b, KernelConfig(ell))
    assert 0 <= k <= 1


def test_empty_counters_give_prior():
    post = posterior(MarginCounters(GRID), K02)
    assert np.all(post.mean == 0)
    assert np.all(post.variance == 1)
    assert post.info_gain == 0
    assert not post.has_data


@pytest.mark.parametrize("n, y", [(1, 1.0), (100, 0.3), (7, 0.0)])
def test_single_margin_closed_form(n, y):
    c = MarginCounters(GRID)
    c.add(0.5, n, int(round(n * y)))
    post = posterior(c, K02)
    assert post.info_gain == pytest.approx(0.5 * math.log(1 + 4 * n), abs=1e-12)
    assert post.mean[2] == pytest.approx(y * n / (n + 0.25), abs=1e-12)
    assert post.variance[2] == pytest.approx(1 - n / (n + 0.25), abs=1e-12)


def test_single_margin_frozen():
    c = MarginCounters(GRID)
    c.add(0.5, 100, 30)
    post = posterior(c, K02)
    assert post.info_gain == pytest.approx(2.9969807136532847, abs=1e-12)
    assert post.mean[2] == pytest.approx(0.29925187032418954, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(histories, st.sampled_from([0.1, 0.2, 0.4]))
def test_aggregated_matches_per_round_oracle(history, ell):
    cfg = KernelConfig(ell)
    agg = posterior(counters_from(history), cfg)
    mean, var = gp_per_round(GRID, history, ell)
    np.testing.assert_allclose(agg.mean, mean, atol=1e-8)
    np.testing.assert_allclose(agg.variance, var, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(histories)
def test_info_gain_same_aggregated_or_per_round(history):
    agg = posterior(counters_from(history), K02)
    raw = per_round_posterior(GRID, history, K02)
    assert agg.info_gain == pytest.approx(raw.info_gain, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(histories)
def test_info_gain_tracker_chain_rule(history):
    tracker = InfoGainTracker(GRID, K02)
    for m, n, _ in history:
        tracker.add(GRID.index(m), n)
    assert tracker.info_gain == pytest.approx(posterior(counters_from(history), K02).info_gain, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(histories)
def test_variance_never_exceeds_prior(history):
    post = posterior(counters_from(history), K02)
    assert np.all(post.variance >= 0)
    assert np.all(post.variance <= 1 + 1e-12)


def test_inactive_margins_are_predicted():
    c = MarginCounters(GRID)
    c.add(0.1, 50, 40)
    post = posterior(c, K02)
    assert post.active_mask.tolist() == [True, False, False, False, False]
    assert 0 < post.mean[1] < post.mean[0]
    assert post.variance[4] > post.variance[1] > post.variance[0]


def test_beta_frozen():
    assert beta(0.0, KernelConfig(), GPConfig(1.0, 0.1)) == pytest.approx(2.2850262824148864, abs=1e-12)


def test_beta_limit_without_bound_or_log_term():
    b = beta(0.0, KernelConfig(), GPConfig(rkhs_bound=1e-12, confidence_delta=1 - 1e-12))
    assert b == pytest.approx(math.sqrt(0.5), abs=1e-6)


@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_beta_monotone(g1, g2):
    lo, hi = sorted((g1, g2))
    cfg = (KernelConfig(), GPConfig())
    assert beta(hi, *cfg) >= beta(lo, *cfg)


def test_beta_rejects_negative_gain():
    with pytest.raises(ValueError):
        beta(-1.0, KernelConfig(), GPConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        KernelConfig(lengthscale=0)
    with pytest.raises(ValueError):
        GPConfig(confidence_delta=1.0)


def test_default_lengthscale_is_half_span():
    assert KernelConfig.for_grid(GRID).lengthscale == pytest.approx(0.4)


def test_posterior_from_arrays_matches_counters():
    n = np.array([10, 0, 30, 0, 5])
    v = np.array([8, 0, 12, 0, 1])
    a = posterior_from_arrays(GRID, n, v, K02)
    b = posterior(MarginCounters(GRID, v, n), K02)
    np.testing.assert_array_equal(a.mean, b.mean)


def test_select_lengthscale_prefers_smooth_data():
    c = MarginCounters(GRID)
    for m, d in zip(GRID, (0.8, 0.7, 0.6, 0.5, 0.4)):
        c.add(m, 200, int(200 * d))
    best = select_lengthscale([c], (0.01, 0.4), KernelConfig())
    assert best.lengthscale == 0.4
