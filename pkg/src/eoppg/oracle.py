"""Closed-form nuisances of the LQ benchmark.

Under ``a ~ N(theta s, sigma^2)`` and ``s' = a - s`` the value functions stay
even quadratics, ``v_j(s) = alpha_j s^2 + gamma_j``, so

    q_j(s, a)  = -s^2 + alpha_{j+1} (a - s)^2 + gamma_{j+1}
    dq_j(s, a) = dalpha_{j+1} (a - s)^2 + dgamma_{j+1}

with ``alpha_H = gamma_H = 0``.  State marginals are centred Gaussians with
variance ``V_j`` (``V_0 = 0``), which gives the density ratios in closed form.
"""

from __future__ import annotations

import numpy as np

from .env import LQBenchmark, state_second_moments
from .nuisance import FAMILIES, NuisanceSet, QuadratureRule, state_action
from .policy import step_ratio_log


def q_coefficients(theta: float, horizon: int, sigma: float):
    """Backward recursion for ``(alpha, gamma, dalpha, dgamma)``, each of length H+1."""
    u = (theta - 1.0) ** 2
    du = 2.0 * (theta - 1.0)
    alpha = np.zeros(horizon + 1)
    gamma = np.zeros(horizon + 1)
    dalpha = np.zeros(horizon + 1)
    dgamma = np.zeros(horizon + 1)
    for j in range(horizon - 1, -1, -1):
        alpha[j] = -1.0 + u * alpha[j + 1]
        gamma[j] = gamma[j + 1] + sigma**2 * alpha[j + 1]
        dalpha[j] = u * dalpha[j + 1] + du * alpha[j + 1]
        dgamma[j] = dgamma[j + 1] + sigma**2 * dalpha[j + 1]
    return alpha, gamma, dalpha, dgamma


class LQOracleNuisances(NuisanceSet):
    """True ``q, mu, dq, dmu`` (and hence ``v, dv``) for the LQ benchmark."""

    families = frozenset(FAMILIES)

    def __init__(self, bench: LQBenchmark, theta: float, quad: QuadratureRule | None = None):
        theta = float(np.squeeze(theta))
        target = bench.target_policy(theta)
        super().__init__(bench.horizon, 1, target, quad)
        self.bench = bench
        self.theta = theta
        self.behavior = bench.behavior_policy()
        self.alpha, self.gamma, self.dalpha, self.dgamma = q_coefficients(theta, bench.horizon, bench.sigma)
        self.V, self.dV = state_second_moments(theta, bench.horizon, bench.sigma)
        self.Vb, _ = state_second_moments(bench.behavior_coef, bench.horizon, bench.sigma)

    def v_exact(self, j, s):
        s = np.asarray(s, dtype=float).reshape(-1)
        return self.alpha[j] * s**2 + self.gamma[j]

    def dv_exact(self, j, s):
        s = np.asarray(s, dtype=float).reshape(-1)
        return (self.dalpha[j] * s**2 + self.dgamma[j])[:, None]

    def _log_state_ratio(self, j, s):
        if j == 0:
            return np.zeros_like(s), np.zeros_like(s)
        V, Vb, dV = self.V[j], self.Vb[j], self.dV[j]
        log_ratio = -0.5 * s**2 / V + 0.5 * s**2 / Vb - 0.5 * np.log(V / Vb)
        dlog = dV * (0.5 * s**2 / V**2 - 0.5 / V)
        return log_ratio, dlog

    def _eval(self, family, j, s, a):
        x = state_action(s, a)
        s1, a1 = x[:, 0], x[:, 1]
        if family == "q":
            return -s1**2 + self.alpha[j + 1] * (a1 - s1) ** 2 + self.gamma[j + 1]
        if family == "dq":
            return (self.dalpha[j + 1] * (a1 - s1) ** 2 + self.dgamma[j + 1])[:, None]
        log_state, dlog_state = self._log_state_ratio(j, s1)
        mu = np.exp(log_state + step_ratio_log(self.target, self.behavior, x[:, :1], a1))
        if family == "mu":
            return mu
        g = self.target.score(x[:, :1], a1)
        return mu[:, None] * (dlog_state[:, None] + g)
