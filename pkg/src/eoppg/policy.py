"""Parametric stochastic policies, scores and importance ratios.

States are passed as ``(N, state_dim)`` arrays and actions as ``(N,)``
arrays; every method is vectorised over the leading axis.  Cumulative
importance ratios are kept in log space and only exponentiated by the
caller at the point of use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, ndtr

_LOG_2PI = np.log(2.0 * np.pi)


def _states(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim == 0:
        return s.reshape(1, 1)
    if s.ndim == 1:
        return s[:, None]
    return s


def _identity_features(s: np.ndarray) -> np.ndarray:
    return s


@dataclass(frozen=True)
class GaussianLinearPolicy:
    """``a | s ~ N(theta . phi(s), sigma^2)`` with a fixed scale.

    ``features`` maps an ``(N, state_dim)`` array to ``(N, D)``; the default
    is the identity, so ``D`` equals the state dimension.
    """

    theta: np.ndarray
    sigma: float = 0.2
    features: Callable[[np.ndarray], np.ndarray] = field(default=_identity_features, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def with_theta(self, theta) -> "GaussianLinearPolicy":
        return GaussianLinearPolicy(theta, self.sigma, self.features)

    def mean(self, s) -> np.ndarray:
        return self.features(_states(s)) @ self.theta

    def log_density(self, s, a) -> np.ndarray:
        z = (np.asarray(a, dtype=float) - self.mean(s)) / self.sigma
        return -0.5 * z * z - np.log(self.sigma) - 0.5 * _LOG_2PI

    def score(self, s, a) -> np.ndarray:
        phi = self.features(_states(s))
        resid = np.asarray(a, dtype=float) - phi @ self.theta
        return phi * (resid / self.sigma**2)[:, None]

    def sample(self, s, z) -> np.ndarray:
        """Draw actions from standard normal noise ``z`` of shape ``(N,)``."""
        return self.mean(s) + self.sigma * np.asarray(z, dtype=float)

    def action_nodes(self, s, rule) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes ``(N, m)`` and weights ``(1, m)`` for E[f(a) | s]."""
        nodes = self.mean(s)[:, None] + self.sigma * rule.nodes[None, :]
        return nodes, rule.weights[None, :]


@dataclass(frozen=True)
class BernoulliLogitPolicy:
    """Two actions {0, 1} with ``P(a=1 | s) = sigmoid(theta . phi(s))``."""

    theta: np.ndarray
    features: Callable[[np.ndarray], np.ndarray] = field(default=_identity_features, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def with_theta(self, theta) -> "BernoulliLogitPolicy":
        return BernoulliLogitPolicy(theta, self.features)

    def prob_one(self, s) -> np.ndarray:
        return expit(self.features(_states(s)) @ self.theta)

    def log_density(self, s, a) -> np.ndarray:
        p = self.prob_one(s)
        a = np.asarray(a, dtype=float)
        return np.where(a > 0.5, np.log(p), np.log1p(-p))

    def score(self, s, a) -> np.ndarray:
        phi = self.features(_states(s))
        return phi * (np.asarray(a, dtype=float) - expit(phi @ self.theta))[:, None]

    def sample(self, s, z) -> np.ndarray:
        return (ndtr(np.asarray(z, dtype=float)) < self.prob_one(s)).astype(float)

    def action_nodes(self, s, rule=None) -> tuple[np.ndarray, np.ndarray]:
        # exact sum over the two actions; the quadrature rule is not needed
        p = self.prob_one(s)
        nodes = np.broadcast_to(np.array([0.0, 1.0]), (p.shape[0], 2))
        return nodes, np.stack([1.0 - p, p], axis=1)


def score(policy, s, a) -> np.ndarray:
    return policy.score(s, a)


def step_ratio_log(target, behavior, s, a) -> np.ndarray:
    """``log pi_target(a|s) - log pi_behavior(a|s)``."""
    return target.log_density(s, a) - behavior.log_density(s, a)


@dataclass(frozen=True)
class RatioSeries:
    """Per-step log importance ratios of one trajectory and their prefix sums."""

    step: np.ndarray
    prefix: np.ndarray

    def cum_log(self, start: int, stop: int) -> float:
        """Log of the product of step ratios over ``start..stop`` inclusive.

        An empty range (``start > stop``) is the empty product, log 1 = 0.
        """
        if start > stop:
            return 0.0
        before = self.prefix[start - 1] if start > 0 else 0.0
        return float(self.prefix[stop] - before)

    def cum_ratio(self, start: int, stop: int) -> float:
        return float(np.exp(self.cum_log(start, stop)))


def ratio_series(target, behavior, traj) -> RatioSeries:
    steps = step_ratio_log(target, behavior, traj.states[:-1], traj.actions)
    return RatioSeries(step=steps, prefix=np.cumsum(steps))


def log_step_ratios(target, behavior, data) -> np.ndarray:
    """``(n, H)`` matrix of log step ratios for a whole dataset."""
    n, H = data.actions.shape
    s = data.states[:, :-1].reshape(n * H, -1)
    a = data.actions.reshape(n * H)
    return step_ratio_log(target, behavior, s, a).reshape(n, H)


def scores(policy, data) -> np.ndarray:
    """``(n, H, D)`` array of per-step scores for a whole dataset."""
    n, H = data.actions.shape
    s = data.states[:, :-1].reshape(n * H, -1)
    a = data.actions.reshape(n * H)
    return policy.score(s, a).reshape(n, H, -1)


def log_density_matrix(policy, data) -> np.ndarray:
    n, H = data.actions.shape
    s = data.states[:, :-1].reshape(n * H, -1)
    return policy.log_density(s, data.actions.reshape(n * H)).reshape(n, H)

