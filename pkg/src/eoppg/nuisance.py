"""Nuisance functions for efficient off-policy policy-gradient estimation.

A nuisance set provides, for every decision step ``j``, the target-policy
q-function ``q_j(s, a)``, the marginal state-action density ratio
``mu_j(s, a)`` and their theta-gradients ``dq_j`` and ``dmu_j``.  The state
value ``v_j`` and its gradient ``dv_j`` are never fitted: they are always
derived from ``q_j`` and ``dq_j`` by integrating over ``a ~ pi_theta(.|s)``.

Boundary conventions (outside ``0 <= j < H``): ``q, v, dq, dv`` vanish at
``j = H`` and ``mu_{-1} = 1``, ``dmu_{-1} = 0``.

Two fitting routes exist for each of ``mu``, ``dq`` and ``dmu``: regressing a
Monte Carlo response built from cumulative importance ratios, or solving the
corresponding Bellman recursion one step at a time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ._rng import substream
from .policy import log_step_ratios, scores, step_ratio_log
from .regression import FeatureMap, FoldPartition, RidgeModel, fit

FAMILIES = ("q", "mu", "dq", "dmu")
_VECTOR_FAMILIES = ("dq", "dmu")
_CLOSED_FORM = "ratio_times_score"


class MissingNuisanceError(LookupError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule for ``E[f(Z)]`` with ``Z ~ N(0, 1)``.

    Exact for polynomials of degree ``<= 2m - 1``.
    """

    m: int = 20
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("need at least one node")
        x, w = np.polynomial.hermite_e.hermegauss(self.m)
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "weights", w / w.sum())

    def expect(self, f: Callable[[np.ndarray], np.ndarray], mean=0.0, scale=1.0):
        return np.sum(self.weights * f(mean + scale * self.nodes))


def state_action(s, a) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    return np.column_stack([s, np.asarray(a, dtype=float)])


def derive_v_dv(q_fn, dq_fn, target, quad: QuadratureRule, s):
    """``v(s) = E[q(s, a)]`` and ``dv(s) = E[dq(s, a) + q(s, a) g(s, a)]``
    over ``a ~ pi_theta(.|s)``.

    ``dq_fn`` may be ``None``, in which case only ``v`` is returned.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    N = s.shape[0]
    nodes, w = target.action_nodes(s, quad)
    m = nodes.shape[1]
    s_rep = np.repeat(s, m, axis=0)
    a_rep = nodes.reshape(N * m)
    qv = q_fn(s_rep, a_rep).reshape(N, m)
    v = np.sum(w * qv, axis=1)
    if dq_fn is None:
        return v
    g = target.score(s_rep, a_rep).reshape(N, m, -1)
    dqv = dq_fn(s_rep, a_rep).reshape(N, m, -1)
    dv = np.sum(w[:, :, None] * (dqv + qv[:, :, None] * g), axis=1)
    return v, dv


class NuisanceSet:
    """Evaluation interface shared by fitted, analytic and corrupted sets.

    Subclasses implement ``_eval(family, j, s, a)`` for ``0 <= j < H``,
    returning ``(N,)`` for q/mu and ``(N, D)`` for dq/dmu.
    """

    families: frozenset = frozenset()

    def __init__(self, horizon: int, dim: int, target, quad: Optional[QuadratureRule] = None):
        self.horizon = horizon
        self.dim = dim
        self.target = target
        self.quad = quad or QuadratureRule()

    def has(self, family: str) -> bool:
        return family in self.families

    def _eval(self, family: str, j: int, s, a) -> np.ndarray:
        raise NotImplementedError

    def _get(self, family, j, s, a):
        if family not in self.families:
            raise MissingNuisanceError(f"nuisance {family!r} is not available")
        return self._eval(family, j, s, a)

    def q(self, j, s, a):
        if j >= self.horizon:
            return np.zeros(len(a))
        return self._get("q", j, s, a)

    def dq(self, j, s, a):
        if j >= self.horizon:
            return np.zeros((len(a), self.dim))
        return self._get("dq", j, s, a)

    def mu(self, j, s, a):
        if j < 0:
            return np.ones(len(a))
        return self._get("mu", j, s, a)

    def dmu(self, j, s, a):
        if j < 0:
            return np.zeros((len(a), self.dim))
        return self._get("dmu", j, s, a)

    def v(self, j, s):
        if j >= self.horizon:
            return np.zeros(len(s))
        return derive_v_dv(lambda s_, a_: self.q(j, s_, a_), None, self.target, self.quad, s)

    def v_dv(self, j, s):
        if j >= self.horizon:
            return np.zeros(len(s)), np.zeros((len(s), self.dim))
        return derive_v_dv(lambda s_, a_: self.q(j, s_, a_),
                           lambda s_, a_: self.dq(j, s_, a_),
                           self.target, self.quad, s)

    def dv(self, j, s):
        return self.v_dv(j, s)[1]

    def expected_q_score(self, j, s):
        """``E[q_j(s, a) g(s, a)]`` over ``a ~ pi_theta(.|s)``."""
        if j >= self.horizon:
            return np.zeros((len(s), self.dim))
        zero = lambda s_, a_: np.zeros((len(a_), self.dim))  # noqa: E731
        return derive_v_dv(lambda s_, a_: self.q(j, s_, a_), zero, self.target, self.quad, s)[1]


class FittedNuisances(NuisanceSet):
    """Nuisances backed by one ridge model per (family, step)."""

    def __init__(self, horizon, dim, target, behavior, models: Mapping[str, Sequence],
                 quad: Optional[QuadratureRule] = None):
        super().__init__(horizon, dim, target, quad)
        self.behavior = behavior
        self.models = {k: list(v) for k, v in models.items()}
        self.families = frozenset(self.models)

    def _eval(self, family, j, s, a):
        entry = self.models[family][j]
        if entry is None:
            raise MissingNuisanceError(f"{family}[{j}] has not been fitted yet")
        if isinstance(entry, str):
            # closed-form dmu_0 = step ratio * score
            ratio = np.exp(step_ratio_log(self.target, self.behavior, s, a))
            return ratio[:, None] * self.target.score(s, a)
        out = entry.predict(state_action(s, a))
        return out[:, 0] if family not in _VECTOR_FAMILIES else out

    def to_records(self, fold: int = 0) -> list[dict]:
        records = []
        for family in FAMILIES:
            for j, entry in enumerate(self.models.get(family, [])):
                if isinstance(entry, str):
                    records.append({"family": family, "j": j, "fold": fold, "closed_form": entry})
                    continue
                for f_idx in range(entry.coef.shape[0]):
                    for comp in range(entry.coef.shape[1]):
                        records.append({"family": family, "j": j, "fold": fold, "feature": f_idx,
                                        "component": comp, "value": float(entry.coef[f_idx, comp])})
        return records


class MergedNuisances(NuisanceSet):
    """Union of several sets; each family is served by the first set that has it."""

    def __init__(self, parts: Sequence[NuisanceSet]):
        first = parts[0]
        super().__init__(first.horizon, first.dim, first.target, first.quad)
        self.parts = list(parts)
        self.families = frozenset().union(*(p.families for p in parts))

    def _eval(self, family, j, s, a):
        for p in self.parts:
            if p.has(family):
                return p._eval(family, j, s, a)
        raise MissingNuisanceError(family)

    def to_records(self, fold: int = 0) -> list[dict]:
        return [r for p in self.parts if hasattr(p, "to_records") for r in p.to_records(fold)]


def combine(*sets: NuisanceSet) -> NuisanceSet:
    if all(isinstance(s, FittedNuisances) for s in sets):
        models = {}
        for s in reversed(sets):
            models.update(s.models)
        first = sets[0]
        behavior = next((s.behavior for s in sets if s.behavior is not None), None)
        return FittedNuisances(first.horizon, first.dim, first.target, behavior, models, first.quad)
    return MergedNuisances(sets)


class CallableNuisances(NuisanceSet):
    """Nuisances given directly as functions ``f(j, s, a)``."""

    def __init__(self, horizon, dim, target, functions: Mapping[str, Callable],
                 quad: Optional[QuadratureRule] = None):
        super().__init__(horizon, dim, target, quad)
        unknown = set(functions) - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown nuisance families {sorted(unknown)}")
        self.functions = dict(functions)
        self.families = frozenset(self.functions)

    def _eval(self, family, j, s, a):
        # vector families return (N, D), (D,) or a scalar; scalar families (N,) or a scalar
        out = np.asarray(self.functions[family](j, s, a), dtype=float)
        shape = (len(a), self.dim) if family in _VECTOR_FAMILIES else (len(a),)
        return np.broadcast_to(out, shape).copy()


def zero_nuisances(horizon, dim, target, families=FAMILIES, quad=None) -> CallableNuisances:
    fns = {}
    for f in families:
        if f in _VECTOR_FAMILIES:
            fns[f] = lambda j, s, a: np.zeros((len(a), dim))
        else:
            fns[f] = lambda j, s, a: np.zeros(len(a))
    return CallableNuisances(horizon, dim, target, fns, quad)


# ----------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class NuisanceConfig:
    """How nuisances are fitted.

    ``ridge`` is per trajectory: the penalty used on a training set of size
    ``n`` is ``ridge * n``.
    """

    degree: int = 2
    ridge: float = 1e-6
    quad_nodes: int = 20
    mu_route: str = "forward"
    dq_route: str = "recursive"
    dmu_route: str = "recursive"

    def __post_init__(self):
        if self.mu_route not in ("forward", "mc"):
            raise ValueError(f"mu_route must be 'forward' or 'mc', got {self.mu_route!r}")
        for name in ("dq_route", "dmu_route"):
            if getattr(self, name) not in ("recursive", "mc"):
                raise ValueError(f"{name} must be 'recursive' or 'mc'")
        if self.ridge < 0 or self.degree < 0 or self.quad_nodes < 1:
            raise ValueError("invalid nuisance configuration")


def _defaults(data, fmap, lam, quad, ridge=1e-6, degree=2):
    if fmap is None:
        fmap = FeatureMap(data.state_dim + 1, degree)
    if lam is None:
        lam = ridge * data.n
    return fmap, lam, quad or QuadratureRule()


def _sa(data, j):
    return data.states[:, j], data.actions[:, j]


def _fit_step(fmap, lam, data, j, y) -> RidgeModel:
    s, a = _sa(data, j)
    return fit(fmap, state_action(s, a), y, lam)


def fit_q_backward(data, target, fmap=None, lam=None, quad=None) -> FittedNuisances:
    """Fitted q-evaluation: regress ``r_j + v_{j+1}(s_{j+1})`` on ``(s_j, a_j)``
    for ``j = H-1, ..., 0``."""
    fmap, lam, quad = _defaults(data, fmap, lam, quad)
    H = data.horizon
    out = FittedNuisances(H, target.dim, target, None, {"q": [None] * H}, quad)
    models = out.models["q"]
    for j in range(H - 1, -1, -1):
        y = data.rewards[:, j] + out.v(j + 1, data.states[:, j + 1])
        models[j] = _fit_step(fmap, lam, data, j, y)
    return out


def fit_mu_mc(data, target, behavior, fmap=None, lam=None, quad=None) -> FittedNuisances:
    """Regress the cumulative ratio ``nu_{0:j}`` on ``(s_j, a_j)``."""
    fmap, lam, quad = _defaults(data, fmap, lam, quad)
    prefix = np.cumsum(log_step_ratios(target, behavior, data), axis=1)
    models = [_fit_step(fmap, lam, data, j, np.exp(prefix[:, j])) for j in range(data.horizon)]
    return FittedNuisances(data.horizon, target.dim, target, behavior, {"mu": models}, quad)


def fit_mu_forward(data, target, behavior, fmap=None, lam=None, quad=None) -> FittedNuisances:
    """Forward recursion: regress ``mu_{j-1}(s_{j-1}, a_{j-1}) * nu~_j`` on ``(s_j, a_j)``."""
    fmap, lam, quad = _defaults(data, fmap, lam, quad)
    steps = np.exp(log_step_ratios(target, behavior, data))
    out = FittedNuisances(data.horizon, target.dim, target, behavior, {"mu": [None] * data.horizon}, quad)
    models = out.models["mu"]
    for j in range(data.horizon):
        prev = out.mu(j - 1, *_sa(data, j - 1)) if j > 0 else 1.0
        models[j] = _fit_step(fmap, lam, data, j, prev * steps[:, j])
    return out


def dq_mc_response(data, target, behavior, j) -> np.ndarray:
    """``sum_{t>j} r_t nu_{j+1:t} sum_{l=j+1..t} g_l`` per trajectory, ``(n, D)``."""
    logs = log_step_ratios(target, behavior, data)
    g = scores(target, data)
    return _dq_response(data.rewards, np.cumsum(logs, axis=1), np.cumsum(g, axis=1), j)


def _dq_response(rewards, prefix, cum_g, j):
    n, H = rewards.shape
    y = np.zeros((n, cum_g.shape[2]))
    if j + 1 >= H:
        return y
    base_log = prefix[:, j]
    base_g = cum_g[:, j]
    for t in range(j + 1, H):
        w = rewards[:, t] * np.exp(prefix[:, t] - base_log)
        y += w[:, None] * (cum_g[:, t] - base_g)
    return y


def fit_dq_mc(data, target, behavior, fmap=None, lam=None, quad=None) -> FittedNuisances:
    fmap, lam, quad = _defaults(data, fmap, lam, quad)
    prefix = np.cumsum(log_step_ratios(target, behavior, data), axis=1)
    cum_g = np.cumsum(scores(target, data), axis=1)
    models = [_fit_step(fmap, lam, data, j, _dq_response(data.rewards, prefix, cum_g, j))
              for j in range(data.horizon)]
    return FittedNuisances(data.horizon, target.dim, target, behavior, {"dq": models}, quad)


def fit_dmu_mc(data, target, behavior, fmap=None, lam=None, quad=None) -> FittedNuisances:
    """Regress ``nu_{0:j} sum_{l<=j} g_l`` on ``(s_j, a_j)``."""
    fmap, lam, quad = _defaults(data, fmap, lam, quad)
    prefix = np.cumsum(log_step_ratios(target, behavior, data), axis=1)
    cum_g = np.cumsum(scores(target, data), axis=1)
    models = [_fit_step(fmap, lam, data, j, np.exp(prefix[:, j])[:, None] * cum_g[:, j])
              for j in range(data.horizon)]
    return FittedNuisances(data.horizon, target.dim, target, behavior, {"dmu": models}, quad)


def fit_dq_recursive(data, q_hat: NuisanceSet, target, fmap=None, lam=None, quad=None) -> FittedNuisances:
    """Backward recursion: ``dq_{H-1} = 0`` and ``dq_j`` regresses
    ``dv_{j+1}(s_{j+1})`` on ``(s_j, a_j)``."""
    fmap, lam, quad = _defaults(data, fmap, lam, quad)
    H = data.horizon
    out = FittedNuisances(H, target.dim, target, None, {"dq": [None] * H}, quad)
    models = out.models["dq"]
    both = MergedNuisances([out, q_hat])
    for j in range(H - 1, -1, -1):
        y = both.dv(j + 1, data.states[:, j + 1])
        models[j] = _fit_step(fmap, lam, data, j, y)
    return out


def fit_dmu_recursive(data, mu_hat: NuisanceSet, target, behavior, fmap=None, lam=None,
                      quad=None) -> FittedNuisances:
    """Forward recursion: ``dmu_0 = nu~_0 g_0`` exactly, then ``dmu_j`` regresses
    ``nu~_j dmu_{j-1}(s_{j-1}, a_{j-1}) + mu_j(s_j, a_j) g_j`` on ``(s_j, a_j)``."""
    fmap, lam, quad = _defaults(data, fmap, lam, quad)
    H = data.horizon
    steps = np.exp(log_step_ratios(target, behavior, data))
    g = scores(target, data)
    out = FittedNuisances(H, target.dim, target, behavior, {"dmu": [None] * H}, quad)
    models = out.models["dmu"]
    models[0] = _CLOSED_FORM
    for j in range(1, H):
        prev = out.dmu(j - 1, *_sa(data, j - 1))
        y = steps[:, j, None] * prev + mu_hat.mu(j, *_sa(data, j))[:, None] * g[:, j]
        models[j] = _fit_step(fmap, lam, data, j, y)
    return out


def fit_nuisances(data, target, behavior, config: NuisanceConfig = NuisanceConfig(),
                  families: Sequence[str] = FAMILIES) -> FittedNuisances:
    """Fit the requested families (plus whatever they depend on) on ``data``."""
    fams = set(families)
    unknown = fams - set(FAMILIES)
    if unknown:
        raise ValueError(f"unknown nuisance families {sorted(unknown)}")
    fmap = FeatureMap(data.state_dim + 1, config.degree)
    lam = config.ridge * data.n
    quad = QuadratureRule(config.quad_nodes)
    kw = dict(fmap=fmap, lam=lam, quad=quad)

    parts = []
    q_hat = mu_hat = None
    if fams & {"q", "dq"}:
        q_hat = fit_q_backward(data, target, **kw)
        parts.append(q_hat)
    if "dq" in fams:
        if config.dq_route == "mc":
            parts.append(fit_dq_mc(data, target, behavior, **kw))
        else:
            parts.append(fit_dq_recursive(data, q_hat, target, **kw))
    if fams & {"mu", "dmu"}:
        route = fit_mu_mc if config.mu_route == "mc" else fit_mu_forward
        mu_hat = route(data, target, behavior, **kw)
        parts.append(mu_hat)
    if "dmu" in fams:
        if config.dmu_route == "mc":
            parts.append(fit_dmu_mc(data, target, behavior, **kw))
        else:
            parts.append(fit_dmu_recursive(data, mu_hat, target, behavior, **kw))
    return combine(*parts)


@dataclass
class CrossFitNuisances:
    """``sets[k]`` is fitted without fold ``k`` and evaluated on fold ``k``."""

    partition: FoldPartition
    sets: list

    def groups(self):
        for k, s in enumerate(self.sets):
            yield self.partition.fold(k), s

    def to_records(self) -> list[dict]:
        return [r for k, s in enumerate(self.sets) for r in s.to_records(fold=k)]


def fit_crossfit(data, target, behavior, partition: FoldPartition,
                 config: NuisanceConfig = NuisanceConfig(),
                 families: Sequence[str] = FAMILIES) -> CrossFitNuisances:
    sets = [fit_nuisances(data.subset(partition.complement(k)), target, behavior, config, families)
            for k in range(partition.k)]
    return CrossFitNuisances(partition, sets)


def write_coefficients(path, nuisances) -> None:
    """Flat JSON list of (family, j, fold, feature, component, value) records."""
    records = nuisances.to_records()
    with open(path, "w") as fh:
        json.dump(records, fh, indent=1)


# ----------------------------------------------------------------------------
# corruption


@dataclass(frozen=True)
class CorruptionSpec:
    families: frozenset = frozenset()
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        fams = frozenset(self.families)
        unknown = fams - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown nuisance families {sorted(unknown)}")
        object.__setattr__(self, "families", fams)


class CorruptedNuisances(NuisanceSet):
    """``base`` plus a fixed additive offset per (family, step, component).

    ``v`` and ``dv`` are re-derived from the corrupted ``q`` and ``dq``.
    """

    def __init__(self, base: NuisanceSet, offsets: Mapping[str, np.ndarray]):
        super().__init__(base.horizon, base.dim, base.target, base.quad)
        self.base = base
        self.offsets = dict(offsets)
        self.families = base.families

    def _eval(self, family, j, s, a):
        out = self.base._eval(family, j, s, a)
        if family in self.offsets:
            out = out + self.offsets[family][j]
        return out


def corruption_offsets(spec: CorruptionSpec, horizon: int, dim: int, fold: int = 0) -> dict:
    # every family is drawn, selected or not, so the offset of one family
    # does not depend on which others are corrupted alongside it
    rng = substream(spec.seed, fold)
    draws = {}
    for family in FAMILIES:
        width = dim if family in _VECTOR_FAMILIES else 1
        z = rng.standard_normal((horizon, width)) * spec.scale
        draws[family] = z if family in _VECTOR_FAMILIES else z[:, 0]
    return {f: draws[f] for f in FAMILIES if f in spec.families}


def corrupt(nuisances, spec: CorruptionSpec, fold: int = 0):
    if isinstance(nuisances, CrossFitNuisances):
        return CrossFitNuisances(nuisances.partition,
                                 [corrupt(s, spec, fold=k) for k, s in enumerate(nuisances.sets)])
    if not spec.families or spec.scale == 0:
        return nuisances
    offsets = corruption_offsets(spec, nuisances.horizon, nuisances.dim, fold)
    return CorruptedNuisances(nuisances, offsets)
