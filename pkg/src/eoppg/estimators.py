"""Off-policy policy-gradient estimators and the doubly robust value estimator.

Every gradient estimator returns per-trajectory contributions whose column
mean is the estimate, so variances and covariances come for free.  Nuisance
based estimators accept either a single :class:`NuisanceSet` (used for every
trajectory) or a :class:`CrossFitNuisances` (each fold evaluated with the set
fitted without it).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from ._rng import substream
from .env import Dataset
from .nuisance import (CrossFitNuisances, MissingNuisanceError, NuisanceConfig,
                       NuisanceSet, fit_crossfit, fit_nuisances)
from .policy import log_step_ratios, scores
from .regression import FoldPartition, RankDeficientError, partition as make_partition

Nuisances = Union[NuisanceSet, CrossFitNuisances]

TERM_NAMES = ("dmu_residual", "mu_dq", "mu_prev_dv", "dmu_prev_v")


@dataclass(frozen=True)
class EifTermBreakdown:
    """``terms[i, j, k]`` is summand ``k`` (see ``TERM_NAMES``) at step ``j`` of trajectory ``i``."""

    terms: np.ndarray  # (n, H, 4, D)

    def contributions(self) -> np.ndarray:
        return self.terms.sum(axis=(1, 2))

    def by_term(self) -> dict:
        return {name: self.terms[:, :, k].sum(axis=1) for k, name in enumerate(TERM_NAMES)}


@dataclass(frozen=True)
class GradientEstimate:
    estimator: str
    contributions: np.ndarray  # (n, D)
    breakdown: Optional[EifTermBreakdown] = None

    @property
    def value(self) -> np.ndarray:
        return self.contributions.mean(axis=0)

    @property
    def n(self) -> int:
        return self.contributions.shape[0]


def empirical_covariance(est: GradientEstimate) -> np.ndarray:
    """Unbiased sample covariance of the contributions divided by ``n``."""
    c = est.contributions
    if c.shape[0] < 2:
        raise ValueError("need at least two contributions for a covariance")
    return np.atleast_2d(np.cov(c, rowvar=False, ddof=1)) / c.shape[0]


def _ratios_and_scores(data: Dataset, target, behavior):
    log_cum = np.cumsum(log_step_ratios(target, behavior, data), axis=1)
    g = scores(target, data)
    return log_cum, g


def grad_reinforce(data: Dataset, target, behavior) -> GradientEstimate:
    log_cum, g = _ratios_and_scores(data, target, behavior)
    w = np.exp(log_cum[:, -1]) * data.rewards.sum(axis=1)
    return GradientEstimate("reinforce", w[:, None] * g.sum(axis=1))


def grad_gpomdp(data: Dataset, target, behavior) -> GradientEstimate:
    log_cum, g = _ratios_and_scores(data, target, behavior)
    inner = np.einsum("nt,ntd->nd", data.rewards, np.cumsum(g, axis=1))
    return GradientEstimate("gpomdp", np.exp(log_cum[:, -1])[:, None] * inner)


def grad_stepwise_is(data: Dataset, target, behavior) -> GradientEstimate:
    log_cum, g = _ratios_and_scores(data, target, behavior)
    w = np.exp(log_cum) * data.rewards
    return GradientEstimate("stepwise_is", np.einsum("nt,ntd->nd", w, np.cumsum(g, axis=1)))


def grad_pg_q(data: Dataset, target, behavior, q_hat: Optional[Nuisances] = None,
              config: NuisanceConfig = NuisanceConfig()) -> GradientEstimate:
    """Plug-in estimator ``E_n[sum_t nu_{0:t} g_t q_t(s_t, a_t)]``.

    Without ``q_hat`` the q-functions are fitted on the whole sample.
    """
    if q_hat is None:
        q_hat = fit_nuisances(data, target, behavior, config, families=("q",))
    log_cum, g = _ratios_and_scores(data, target, behavior)

    def contrib(sub, nu, idx):
        out = np.zeros((sub.n, target.dim))
        for j in range(sub.horizon):
            q = nu.q(j, sub.states[:, j], sub.actions[:, j])
            out += (np.exp(log_cum[idx, j]) * q)[:, None] * g[idx, j]
        return out

    return GradientEstimate("pg", _per_fold(data, q_hat, contrib, target.dim))


def _per_fold(data: Dataset, nuisances: Nuisances, fn, width, shape=None) -> np.ndarray:
    """Apply ``fn(subset, nuisance_set, idx)`` per fold and scatter the rows back."""
    out = np.zeros((data.n,) + (shape or (width,)))
    if isinstance(nuisances, CrossFitNuisances):
        if nuisances.partition.n != data.n:
            raise ValueError("partition size does not match the dataset")
        groups = nuisances.groups()
    else:
        groups = [(np.arange(data.n), nuisances)]
    for idx, nu in groups:
        if idx.size:
            out[idx] = fn(data.subset(idx), nu, idx)
    return out


def _require(nuisances: Nuisances, families):
    sets = nuisances.sets if isinstance(nuisances, CrossFitNuisances) else [nuisances]
    for s in sets:
        missing = [f for f in families if not s.has(f)]
        if missing:
            raise MissingNuisanceError(f"missing nuisance families {missing}")


def eif_terms(data: Dataset, nuisances: NuisanceSet) -> np.ndarray:
    """The four MDP influence-function summands, shape ``(n, H, 4, D)``."""
    n, H = data.n, data.horizon
    D = nuisances.dim
    terms = np.zeros((n, H, 4, D))
    mu_prev = np.ones(n)
    dmu_prev = np.zeros((n, D))
    for j in range(H):
        s, a = data.states[:, j], data.actions[:, j]
        mu = nuisances.mu(j, s, a)
        dmu = nuisances.dmu(j, s, a)
        q = nuisances.q(j, s, a)
        dq = nuisances.dq(j, s, a)
        v, dv = nuisances.v_dv(j, s)
        terms[:, j, 0] = dmu * (data.rewards[:, j] - q)[:, None]
        terms[:, j, 1] = -mu[:, None] * dq
        terms[:, j, 2] = mu_prev[:, None] * dv
        terms[:, j, 3] = dmu_prev * v[:, None]
        mu_prev, dmu_prev = mu, dmu
    return terms


def eoppg_from_nuisances(data: Dataset, nuisances: Nuisances) -> GradientEstimate:
    _require(nuisances, ("q", "mu", "dq", "dmu"))
    sets = nuisances.sets if isinstance(nuisances, CrossFitNuisances) else [nuisances]
    D = sets[0].dim
    terms = _per_fold(data, nuisances, lambda sub, nu, idx: eif_terms(sub, nu), D,
                      shape=(data.horizon, 4, D))
    breakdown = EifTermBreakdown(terms)
    return GradientEstimate("eoppg", breakdown.contributions(), breakdown)


def eoppg_partition(n: int, K: int, seed) -> FoldPartition:
    if K < 2:
        raise ValueError(f"need K >= 2 folds, got {K}")
    if n < 2 * K:
        raise ValueError(f"need n >= 2K trajectories, got n={n}, K={K}")
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    return make_partition(n, K, substream(*key))


def fit_eoppg_nuisances(data: Dataset, target, behavior, K: int = 2,
                        config: NuisanceConfig = NuisanceConfig(), seed=0,
                        partition: Optional[FoldPartition] = None,
                        families=("q", "mu", "dq", "dmu")) -> CrossFitNuisances:
    if partition is None:
        partition = eoppg_partition(data.n, K, seed)
    elif partition.n != data.n:
        raise ValueError("partition size does not match the dataset")
    try:
        return fit_crossfit(data, target, behavior, partition, config, families)
    except RankDeficientError as err:
        sizes = partition.sizes().tolist()
        raise RankDeficientError(f"cross-fitting with fold sizes {sizes} failed: {err}") from err


def grad_eoppg(data: Dataset, target, behavior, K: int = 2,
               config: NuisanceConfig = NuisanceConfig(), seed=0,
               partition: Optional[FoldPartition] = None,
               nuisances: Optional[Nuisances] = None) -> GradientEstimate:
    """Cross-fitted efficient estimator.

    Each fold is evaluated with nuisances fitted on the remaining folds.
    Passing ``nuisances`` skips fitting (e.g. to inject true nuisances).
    """
    if nuisances is None:
        nuisances = fit_eoppg_nuisances(data, target, behavior, K, config, seed, partition)
    return eoppg_from_nuisances(data, nuisances)


def grad_eif_nmdp(data: Dataset, target, behavior, nuisances: Optional[Nuisances] = None,
                  K: int = 2, config: NuisanceConfig = NuisanceConfig(), seed=0) -> GradientEstimate:
    """Non-Markov influence-function estimator with exact cumulative ratios
    ``nu_{0:j}`` and ``d nu_j = nu_{0:j} sum_{l<=j} g_l``; only ``q`` and ``dq``
    are fitted."""
    if nuisances is None:
        nuisances = fit_eoppg_nuisances(data, target, behavior, K, config, seed,
                                        families=("q", "dq"))
    _require(nuisances, ("q", "dq"))
    log_cum, g = _ratios_and_scores(data, target, behavior)
    cum_g = np.cumsum(g, axis=1)

    def contrib(sub, nu, idx):
        out = np.zeros((sub.n, target.dim))
        ratio_prev = np.ones(sub.n)
        dratio_prev = np.zeros((sub.n, target.dim))
        for j in range(sub.horizon):
            s, a = sub.states[:, j], sub.actions[:, j]
            ratio = np.exp(log_cum[idx, j])
            dratio = ratio[:, None] * cum_g[idx, j]
            q = nu.q(j, s, a)
            v, dv = nu.v_dv(j, s)
            out += (dratio * (sub.rewards[:, j] - q)[:, None] - ratio[:, None] * nu.dq(j, s, a)
                    + ratio_prev[:, None] * dv + dratio_prev * v[:, None])
            ratio_prev, dratio_prev = ratio, dratio
        return out

    return GradientEstimate("eif_nmdp", _per_fold(data, nuisances, contrib, target.dim))


_SPECIAL_NEEDS = {"a": ("q", "dq"), "b": ("dmu",), "c": ("mu", "q")}


def grad_special(data: Dataset, variant: str, nuisances: Nuisances, target=None) -> GradientEstimate:
    """Single-nuisance gradient estimators.

    ``a``: ``E_n[dv_0(s_0)]``; ``b``: ``E_n[sum_j dmu_j r_j]``;
    ``c``: ``E_n[sum_j mu_{j-1}(s_{j-1}, a_{j-1}) E_theta[q_j g_j | s_j]]``.
    """
    if variant not in _SPECIAL_NEEDS:
        raise ValueError(f"variant must be one of {sorted(_SPECIAL_NEEDS)}, got {variant!r}")
    _require(nuisances, _SPECIAL_NEEDS[variant])
    sets = nuisances.sets if isinstance(nuisances, CrossFitNuisances) else [nuisances]
    D = sets[0].dim

    def contrib(sub, nu, idx):
        if variant == "a":
            return nu.dv(0, sub.states[:, 0])
        out = np.zeros((sub.n, D))
        for j in range(sub.horizon):
            s, a = sub.states[:, j], sub.actions[:, j]
            if variant == "b":
                out += nu.dmu(j, s, a) * sub.rewards[:, j, None]
            else:
                prev = nu.mu(j - 1, sub.states[:, j - 1], sub.actions[:, j - 1]) if j > 0 else np.ones(sub.n)
                out += prev[:, None] * nu.expected_q_score(j, s)
        return out

    return GradientEstimate(f"special_{variant}", _per_fold(data, nuisances, contrib, D))


def value_dr_contributions(data: Dataset, nuisances: Nuisances) -> np.ndarray:
    _require(nuisances, ("q", "mu"))

    def contrib(sub, nu, idx):
        out = nu.v(0, sub.states[:, 0])
        for j in range(sub.horizon):
            s, a = sub.states[:, j], sub.actions[:, j]
            resid = sub.rewards[:, j] + nu.v(j + 1, sub.states[:, j + 1]) - nu.q(j, s, a)
            out = out + nu.mu(j, s, a) * resid
        return out[:, None]

    return _per_fold(data, nuisances, contrib, 1)[:, 0]


def value_dr(data: Dataset, nuisances: Nuisances) -> float:
    """Doubly robust off-policy value ``E_n[v_0(s_0) + sum_j mu_j (r_j + v_{j+1} - q_j)]``."""
    return float(value_dr_contributions(data, nuisances).mean())


ESTIMATORS = ("reinforce", "gpomdp", "stepwise_is", "pg", "eoppg", "eif_nmdp")
