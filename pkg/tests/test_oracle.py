import numpy as np
import pytest

from eoppg.env import LQBenchmark, analytic_gradient, analytic_value, sample_dataset
from eoppg.oracle import LQOracleNuisances, q_coefficients


@pytest.fixture(scope="module")
def orc(bench20):
    return LQOracleNuisances(bench20, 0.9)


def test_bellman_identity_holds_pointwise(orc, rng):
    s = rng.normal(scale=0.4, size=100)
    a = rng.normal(scale=0.4, size=100)
    for j in range(orc.horizon):
        assert np.allclose(orc.q(j, s, a), -s**2 + orc.v(j + 1, a - s), atol=1e-12)
        assert np.allclose(orc.dq(j, s, a), orc.dv(j + 1, a - s), atol=1e-12)


def test_quadrature_values_match_closed_form(orc):
    s = np.linspace(-1, 1, 7)
    for j in range(orc.horizon):
        assert np.allclose(orc.v(j, s), orc.v_exact(j, s), atol=1e-12)
        assert np.allclose(orc.dv(j, s), orc.dv_exact(j, s), atol=1e-12)


@pytest.mark.parametrize("theta", [0.3, 0.9, 1.0, 1.6])
def test_initial_value_and_derivative_match_analytic(theta):
    bench = LQBenchmark(horizon=50)
    o = LQOracleNuisances(bench, theta)
    assert o.v_exact(0, [0.0])[0] == pytest.approx(analytic_value(theta, bench), rel=1e-12)
    assert o.dv_exact(0, [0.0])[0, 0] == pytest.approx(analytic_gradient(theta, bench), rel=1e-10, abs=1e-14)


def test_last_step_coefficients_by_hand():
    alpha, gamma, dalpha, dgamma = q_coefficients(0.5, 2, 0.2)
    assert np.allclose(alpha, [-1.25, -1.0, 0.0])
    assert np.allclose(gamma, [-0.04, 0.0, 0.0])
    assert np.allclose(dalpha, [1.0, 0.0, 0.0])
    assert np.allclose(dgamma, [0.0, 0.0, 0.0])


@pytest.mark.parametrize("family", ["q", "mu"])
def test_derivatives_match_central_differences(bench20, family, rng):
    s = rng.normal(scale=0.3, size=20)
    a = rng.normal(scale=0.3, size=20)
    h = 1e-6
    for theta in (0.7, 1.2):
        hi, lo, mid = (LQOracleNuisances(bench20, theta + d) for d in (h, -h, 0.0))
        for j in (1, 5, 15):
            fd = (getattr(hi, family)(j, s, a) - getattr(lo, family)(j, s, a)) / (2 * h)
            exact = getattr(mid, "d" + family)(j, s, a)[:, 0]
            assert np.allclose(fd, exact, rtol=1e-5, atol=1e-7)


def test_first_step_ratio_is_the_action_ratio(orc):
    s = np.zeros(5)
    a = np.linspace(-0.3, 0.3, 5)
    expected = np.exp(orc.target.log_density(s, a) - orc.behavior.log_density(s, a))
    assert np.allclose(orc.mu(0, s, a), expected)
    assert np.allclose(orc.dmu(0, s, a), expected[:, None] * orc.target.score(s, a))


def test_ratio_reweights_behavior_to_target(bench20):
    d = sample_dataset(bench20, bench20.behavior_policy(), 200_000, 21)
    o = LQOracleNuisances(bench20, 0.9)
    for j in (1, 7, 19):
        s, a = d.states[:, j, 0], d.actions[:, j]
        mu = o.mu(j, s, a)
        assert abs(mu.mean() - 1) < 4 * mu.std() / np.sqrt(d.n)
        # E_b[mu s^2] is the target second moment of s_j
        w = mu * s**2
        assert abs(w.mean() - o.V[j]) < 4 * w.std() / np.sqrt(d.n)
        dmu = o.dmu(j, s, a)[:, 0]
        assert abs(dmu.mean()) < 4 * dmu.std() / np.sqrt(d.n)
