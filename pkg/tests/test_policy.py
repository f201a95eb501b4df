import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from eoppg.nuisance import QuadratureRule
from eoppg.policy import (BernoulliLogitPolicy, GaussianLinearPolicy, log_density_matrix,
                          log_step_ratios, ratio_series, scores, step_ratio_log)

QUAD = QuadratureRule(20)


def expect_over_actions(policy, s, f):
    nodes, w = policy.action_nodes(s, QUAD)
    s_rep = np.repeat(np.atleast_2d(s).reshape(-1, 1), nodes.shape[1], axis=0)
    vals = f(s_rep, nodes.reshape(-1)).reshape(nodes.shape[0], nodes.shape[1], -1)
    return np.sum(w[:, :, None] * vals, axis=1)


def test_log_density_matches_scipy(rng):
    pi = GaussianLinearPolicy(0.7, 0.2)
    s = rng.normal(size=50)
    a = rng.normal(size=50)
    assert np.allclose(pi.log_density(s, a), norm.logpdf(a, 0.7 * s, 0.2), atol=1e-12)


@pytest.mark.parametrize("theta", [0.0, 0.8, 1.0, 1.7])
def test_score_has_mean_zero_by_quadrature(theta, rng):
    pi = GaussianLinearPolicy(theta)
    s = rng.normal(scale=0.5, size=20)
    m = expect_over_actions(pi, s, lambda s_, a_: pi.score(s_, a_))
    assert np.max(np.abs(m)) < 1e-10


def test_score_has_mean_zero_by_monte_carlo(rng):
    pi = GaussianLinearPolicy(0.9)
    s = rng.normal(scale=0.3, size=200_000)
    a = pi.sample(s, rng.standard_normal(s.size))
    g = pi.score(s, a)[:, 0]
    assert abs(g.mean()) < 4 * g.std() / np.sqrt(g.size)


def test_step_ratio_integrates_to_one_under_behavior(rng):
    target, behavior = GaussianLinearPolicy(1.0), GaussianLinearPolicy(0.8)
    s = rng.normal(scale=0.5, size=20)
    m = expect_over_actions(behavior, s,
                            lambda s_, a_: np.exp(step_ratio_log(target, behavior, s_, a_))[:, None])
    assert np.max(np.abs(m - 1)) < 1e-8


@settings(max_examples=50, deadline=None)
@given(theta=st.floats(-2, 2), s=st.floats(-1, 1), a=st.floats(-2, 2))
def test_score_is_derivative_of_log_ratio(theta, s, a):
    behavior = GaussianLinearPolicy(0.8)
    h = 1e-6
    f = lambda th: step_ratio_log(GaussianLinearPolicy(th), behavior, [s], [a])[0]  # noqa: E731
    fd = (f(theta + h) - f(theta - h)) / (2 * h)
    g = GaussianLinearPolicy(theta).score([s], [a])[0, 0]
    assert abs(fd - g) <= 1e-6 * max(abs(g), 1.0)


def test_feature_map_policy_score_shape():
    pi = GaussianLinearPolicy([0.5, -1.0], features=lambda s: np.column_stack([s[:, 0], np.ones(len(s))]))
    g = pi.score(np.array([0.3, -0.2]), np.array([0.1, 0.4]))
    resid = np.array([0.1 - (0.15 - 1.0), 0.4 - (-0.1 - 1.0)]) / 0.04
    assert np.allclose(g, np.column_stack([[0.3, -0.2], [1.0, 1.0]]) * resid[:, None])


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        GaussianLinearPolicy(1.0, sigma=0.0)


def test_bernoulli_policy_density_score_and_sampling(rng):
    pi = BernoulliLogitPolicy(0.4)
    s = np.ones(4)
    a = np.array([0.0, 1.0, 1.0, 0.0])
    p = 1 / (1 + np.exp(-0.4))
    assert np.allclose(pi.log_density(s, a), np.log(np.where(a > 0.5, p, 1 - p)))
    assert np.allclose(pi.score(s, a)[:, 0], a - p)
    h = 1e-6
    fd = (BernoulliLogitPolicy(0.4 + h).log_density(s, a) - BernoulliLogitPolicy(0.4 - h).log_density(s, a)) / (2 * h)
    assert np.allclose(fd, pi.score(s, a)[:, 0], atol=1e-8)
    draws = pi.sample(np.ones(100_000), rng.standard_normal(100_000))
    assert abs(draws.mean() - p) < 4 * np.sqrt(p * (1 - p) / 1e5)
    nodes, w = pi.action_nodes(s)
    assert np.allclose(w.sum(axis=1), 1) and np.allclose(w[:, 1], p)


def test_ratio_series_matches_brute_force_products(offpolicy_data):
    target, behavior = GaussianLinearPolicy(1.0), GaussianLinearPolicy(0.8)
    traj = offpolicy_data[0]
    series = ratio_series(target, behavior, traj)
    steps = np.exp(target.log_density(traj.states[:-1], traj.actions)
                   - behavior.log_density(traj.states[:-1], traj.actions))
    assert series.cum_ratio(2, 6) == pytest.approx(np.prod(steps[2:7]), rel=1e-12)
    assert series.cum_ratio(0, 0) == pytest.approx(steps[0], rel=1e-12)
    assert series.cum_log(5, 4) == 0.0


def test_batch_helpers_agree_with_per_trajectory(offpolicy_data):
    target, behavior = GaussianLinearPolicy(1.0), GaussianLinearPolicy(0.8)
    d = offpolicy_data.subset(np.arange(5))
    L = log_step_ratios(target, behavior, d)
    G = scores(target, d)
    D = log_density_matrix(target, d)
    assert L.shape == (5, d.horizon) and G.shape == (5, d.horizon, 1)
    for i in range(5):
        assert np.allclose(L[i], ratio_series(target, behavior, d[i]).step)
        assert np.allclose(G[i], target.score(d.states[i, :-1], d.actions[i]))
        assert np.allclose(D[i], target.log_density(d.states[i, :-1], d.actions[i]))


def test_long_horizon_ratios_stay_finite_in_log_space():
    target, behavior = GaussianLinearPolicy(2.0), GaussianLinearPolicy(0.0)
    s = np.full(2000, 1.0)
    a = np.full(2000, -1.0)
    total = step_ratio_log(target, behavior, s, a).sum()
    assert np.isfinite(total) and total < -1e4
