"""Projected gradient ascent on a fixed off-policy dataset."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .env import Dataset, LQBenchmark, analytic_gradient, analytic_value
from .estimators import (eoppg_partition, grad_eoppg, grad_gpomdp, grad_pg_q, grad_reinforce,
                         grad_stepwise_is)
from .nuisance import NuisanceConfig

THETA_STAR = 1.0


class AscentError(RuntimeError):
    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"gradient estimate failed at iteration {iteration}: {cause}")
        self.iteration = iteration


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("box needs matching bounds with lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, theta) -> bool:
        theta = np.atleast_1d(theta)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))


def project(theta, box: Box) -> np.ndarray:
    return np.clip(np.atleast_1d(np.asarray(theta, dtype=float)), box.lower, box.upper)


def constant_schedule(alpha: float) -> Callable[[int], float]:
    if not alpha > 0:
        raise ValueError("step size must be positive")
    return lambda t: alpha


def sqrt_schedule(upsilon: float, c: float) -> Callable[[int], float]:
    """``alpha_t = upsilon / sqrt(t * c)``."""
    if not (upsilon > 0 and c > 0):
        raise ValueError("upsilon and c must be positive")
    return lambda t: upsilon / np.sqrt(t * c)


@dataclass(frozen=True)
class AscentConfig:
    theta1: float = 0.2
    alpha: float = 0.15
    schedule: str = "constant"   # or "sqrt"
    sqrt_c: float = 1.0          # constant under the square root for the sqrt schedule
    iterations: int = 40
    lower: float = 0.0
    upper: float = 2.0
    estimator: str = "eoppg"
    folds: int = 2
    nuisance: NuisanceConfig = field(default_factory=NuisanceConfig)
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.schedule not in ("constant", "sqrt"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not self.alpha > 0:
            raise ValueError("step size must be positive")
        if not self.box.contains(self.theta1):
            raise ValueError(f"theta1={self.theta1} lies outside [{self.lower}, {self.upper}]")

    @property
    def box(self) -> Box:
        return Box(self.lower, self.upper)

    def step_size(self) -> Callable[[int], float]:
        if self.schedule == "sqrt":
            return sqrt_schedule(self.box.diameter, self.sqrt_c)
        return constant_schedule(self.alpha)


@dataclass
class AscentStep:
    t: int
    theta: np.ndarray
    grad: np.ndarray
    seconds: float


@dataclass
class AscentTrace:
    steps: list
    final: np.ndarray

    @property
    def thetas(self) -> np.ndarray:
        return np.array([s.theta for s in self.steps])

    @property
    def theta_bar(self) -> np.ndarray:
        return self.thetas.mean(axis=0)

    def write_csv(self, fh, bench: Optional[LQBenchmark] = None, replication: int = 0) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replication", "t", "theta", "grad", "J_analytic"])
        for s in self.steps:
            J = repr(analytic_value(s.theta[0], bench)) if bench is not None else ""
            w.writerow([replication, s.t, repr(float(s.theta[0])), repr(float(s.grad[0])), J])

    def to_csv(self, path, bench: Optional[LQBenchmark] = None, replication: int = 0) -> None:
        with open(path, "w", newline="") as fh:
            self.write_csv(fh, bench, replication)


GradientFn = Callable[[np.ndarray, Dataset], np.ndarray]


def make_estimator(env: LQBenchmark, config: AscentConfig) -> GradientFn:
    """Gradient oracle for ``ascend``; the EOPPG fold partition is drawn once
    and reused at every iterate."""
    name = config.estimator
    if name == "analytic":
        return lambda theta, data: np.atleast_1d(analytic_gradient(theta[0], env))
    if name == "zero":
        return lambda theta, data: np.zeros_like(theta)
    behavior = env.behavior_policy()
    simple = {"reinforce": grad_reinforce, "gpomdp": grad_gpomdp, "stepwise_is": grad_stepwise_is}
    if name in simple:
        return lambda theta, data: simple[name](data, env.target_policy(theta), behavior).value
    if name == "pg":
        return lambda theta, data: grad_pg_q(data, env.target_policy(theta), behavior,
                                             config=config.nuisance).value
    if name == "eoppg":
        cache = {}

        def fn(theta, data):
            if "part" not in cache:
                cache["part"] = eoppg_partition(data.n, config.folds, (config.seed, "partition"))
            return grad_eoppg(data, env.target_policy(theta), behavior, config.folds,
                              config.nuisance, partition=cache["part"]).value
        return fn
    raise ValueError(f"unknown estimator {name!r}")


def ascend(data: Dataset, env: LQBenchmark, config: AscentConfig,
           estimator: Optional[GradientFn] = None) -> AscentTrace:
    """``theta_{t+1} = proj(theta_t + alpha_t Z(theta_t))`` for t = 1..T, reusing ``data``."""
    grad_fn = estimator or make_estimator(env, config)
    step = config.step_size()
    box = config.box
    theta = project(config.theta1, box)
    steps = []
    for t in range(1, config.iterations + 1):
        start = time.perf_counter()
        try:
            grad = np.atleast_1d(np.asarray(grad_fn(theta, data), dtype=float))
        except Exception as err:
            raise AscentError(t, err) from err
        steps.append(AscentStep(t, theta, grad, time.perf_counter() - start))
        theta = project(theta + step(t) * grad, box)
    return AscentTrace(steps, theta)


def regret(theta_hat, bench: LQBenchmark) -> float:
    return analytic_value(THETA_STAR, bench) - analytic_value(float(np.squeeze(theta_hat)), bench)
