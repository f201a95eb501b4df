"""Seeded replication harness: gradient MSE, corruption robustness and regret.

Replication ``r`` at sample size ``n`` draws its dataset from the substream
keyed by ``(master seed, "data", n, r)``.  All estimators and corruption
variants of that replication share the dataset, the EOPPG fold partition and
the corruption offsets, so arms are paired.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import yaml

from ._rng import derive_seed
from .env import LQBenchmark, analytic_gradient, sample_dataset
from .estimators import (eoppg_from_nuisances, fit_eoppg_nuisances, grad_eif_nmdp, grad_gpomdp,
                         grad_pg_q, grad_reinforce, grad_stepwise_is)
from .nuisance import CorruptionSpec, NuisanceConfig, corrupt
from .optimizer import AscentConfig, ascend, regret

KINDS = ("mse", "robustness", "regret")
MSE_ESTIMATORS = ("reinforce", "gpomdp", "stepwise_is", "pg", "eoppg", "eif_nmdp")
REGRET_ARMS = ("eoppg", "analytic", "stepwise_is", "reinforce", "gpomdp", "pg")
CORRUPTIONS = {
    "none": (),
    "q_dq": ("q", "dq"),
    "mu_dmu": ("mu", "dmu"),
    "dmu_dq": ("dmu", "dq"),
    "all": ("q", "mu", "dq", "dmu"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "mse"
    sizes: tuple = (800, 1600)
    replications: int = 30
    estimators: tuple = ("stepwise_is", "pg", "eoppg")
    theta: float = 1.0
    corruptions: tuple = tuple(CORRUPTIONS)
    corruption_scale: float = 1.0
    seed: int = 0
    out: Optional[str] = None
    horizon: int = 20
    sigma: float = 0.2
    behavior: float = 0.8
    folds: int = 2
    nuisance: NuisanceConfig = field(default_factory=NuisanceConfig)
    ascent: AscentConfig = field(default_factory=AscentConfig)
    workers: int = 1
    failure_tolerance: float = 0.0
    timing: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        sizes = tuple(int(n) for n in self.sizes)
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError(f"sizes must be non-empty and strictly increasing, got {list(sizes)}")
        object.__setattr__(self, "sizes", sizes)
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "corruptions", tuple(self.corruptions))
        allowed = REGRET_ARMS if self.kind == "regret" else MSE_ESTIMATORS
        if self.kind != "robustness":
            bad = [e for e in self.estimators if e not in allowed]
            if bad or not self.estimators:
                raise ConfigError(f"unknown estimators {bad}; choose from {allowed}")
        else:
            bad = [c for c in self.corruptions if c not in CORRUPTIONS]
            if bad or not self.corruptions:
                raise ConfigError(f"unknown corruption variants {bad}; choose from {list(CORRUPTIONS)}")
        crossfit = self.kind == "robustness" or {"eoppg", "eif_nmdp"} & set(self.estimators)
        if crossfit and self.sizes[0] < 2 * self.folds:
            raise ConfigError(f"n={self.sizes[0]} is too small for {self.folds}-fold cross-fitting")
        if self.seed < 0 or self.workers < 1 or not 0 <= self.failure_tolerance <= 1:
            raise ConfigError("seed must be >= 0, workers >= 1 and failure_tolerance in [0, 1]")

    @property
    def bench(self) -> LQBenchmark:
        return LQBenchmark(horizon=self.horizon, sigma=self.sigma, behavior_coef=self.behavior)


PRESETS = {
    "ci": {
        "mse": dict(sizes=(200, 400, 800), replications=30, horizon=20),
        "robustness": dict(sizes=(400, 800), replications=10, horizon=20),
        "regret": dict(sizes=(200, 400), replications=5, horizon=20,
                       estimators=("eoppg", "analytic")),
    },
    "full": {
        "mse": dict(sizes=(800, 1600, 3200, 6400), replications=100, horizon=50,
                    estimators=("stepwise_is", "pg", "eoppg")),
        "robustness": dict(sizes=(800, 1600, 3200, 6400), replications=100, horizon=50),
        "regret": dict(sizes=(200, 400, 800, 1600), replications=60, horizon=50,
                       estimators=("eoppg", "analytic"), ascent={"theta1": 0.8}),
    },
}


def _build(kind: str, values: dict) -> ExperimentConfig:
    values = dict(values)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    try:
        if isinstance(values.get("nuisance"), dict):
            values["nuisance"] = NuisanceConfig(**values["nuisance"])
        if isinstance(values.get("ascent"), dict):
            values["ascent"] = AscentConfig(**values["ascent"])
        for key in ("sizes", "estimators", "corruptions"):
            if key in values:
                values[key] = tuple(values[key])
        if kind == "regret":
            values.setdefault("estimators", ("eoppg", "analytic"))
        return ExperimentConfig(kind=kind, **values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def preset_config(name: str, kind: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return _build(kind, _merge(PRESETS[name][kind], overrides))


def load_config(path, kind: Optional[str] = None, preset: Optional[str] = None,
                **overrides) -> ExperimentConfig:
    """Read a YAML (or JSON) mapping; ``kind`` and a preset base are optional."""
    try:
        with open(path) as fh:
            values = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(values, dict):
        raise ConfigError("config must be a mapping")
    kind = kind or values.pop("kind", None) or "mse"
    values.pop("kind", None)
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    if preset and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    base = PRESETS[preset][kind] if preset else {}
    return _build(kind, _merge(_merge(base, values), overrides))


# ----------------------------------------------------------------------------
# rows


@dataclass
class ResultRow:
    experiment: str
    estimator: str
    corruption: str
    n: int
    replication: int
    seed: int
    theta: float
    estimate: Optional[np.ndarray] = None
    squared_error: Optional[float] = None
    regret: Optional[float] = None
    runtime_ms: Optional[float] = None
    error: str = ""

    def sort_key(self, config: ExperimentConfig):
        names = config.corruptions if config.kind == "robustness" else config.estimators
        tag = self.corruption if config.kind == "robustness" else self.estimator
        return (names.index(tag) if tag in names else len(names), self.n, self.replication)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_rows(rows: list, fh, dim: int = 1) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["experiment", "estimator", "corruption", "n", "replication", "seed", "theta",
                *[f"estimate_{k}" for k in range(dim)], "squared_error", "regret", "runtime_ms",
                "error"])
    for r in rows:
        est = [""] * dim if r.estimate is None else [_fmt(v) for v in r.estimate]
        w.writerow([r.experiment, r.estimator, r.corruption, r.n, r.replication, r.seed,
                    _fmt(r.theta), *est, _fmt(r.squared_error), _fmt(r.regret),
                    _fmt(r.runtime_ms), r.error])


def rows_to_csv(rows: list, dim: int = 1) -> str:
    buf = io.StringIO()
    write_rows(rows, buf, dim)
    return buf.getvalue()


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------------------
# one replication


def data_seed(master: int, n: int, r: int) -> int:
    return derive_seed(master, "data", n, r)


def _estimate(name, data, target, behavior, config, seed):
    if name == "reinforce":
        return grad_reinforce(data, target, behavior).value
    if name == "gpomdp":
        return grad_gpomdp(data, target, behavior).value
    if name == "stepwise_is":
        return grad_stepwise_is(data, target, behavior).value
    if name == "pg":
        return grad_pg_q(data, target, behavior, config=config.nuisance).value
    if name == "eoppg":
        nu = fit_eoppg_nuisances(data, target, behavior, config.folds, config.nuisance, (seed, "partition"))
        return eoppg_from_nuisances(data, nu).value
    if name == "eif_nmdp":
        return grad_eif_nmdp(data, target, behavior, K=config.folds, config=config.nuisance,
                             seed=(seed, "partition")).value
    raise ValueError(f"unknown estimator {name!r}")


def _timed(config, fn):
    start = time.perf_counter()
    out = fn()
    ms = (time.perf_counter() - start) * 1e3 if config.timing else None
    return out, ms


def _error_text(err: BaseException) -> str:
    return f"{type(err).__name__}: {err}".replace("\n", " ")


def _run_mse_item(config: ExperimentConfig, n: int, r: int) -> list:
    bench = config.bench
    seed = data_seed(config.seed, n, r)
    data = sample_dataset(bench, bench.behavior_policy(), n, seed)
    target = bench.target_policy(config.theta)
    truth = analytic_gradient(config.theta, bench)
    rows = []
    for name in config.estimators:
        row = ResultRow("mse", name, "none", n, r, seed, config.theta)
        try:
            est, row.runtime_ms = _timed(config, lambda: _estimate(name, data, target,
                                                                   bench.behavior_policy(), config, seed))
            row.estimate = np.asarray(est, dtype=float)
            row.squared_error = float(np.sum((row.estimate - truth) ** 2))
        except Exception as err:  # recorded per row, the run continues
            row.error = _error_text(err)
        rows.append(row)
    return rows


def _run_robustness_item(config: ExperimentConfig, n: int, r: int) -> list:
    bench = config.bench
    seed = data_seed(config.seed, n, r)
    data = sample_dataset(bench, bench.behavior_policy(), n, seed)
    target = bench.target_policy(config.theta)
    truth = analytic_gradient(config.theta, bench)
    try:
        nuisances, fit_ms = _timed(config, lambda: fit_eoppg_nuisances(
            data, target, bench.behavior_policy(), config.folds, config.nuisance, (seed, "partition")))
    except Exception as err:
        return [ResultRow("robustness", "eoppg", v, n, r, seed, config.theta, error=_error_text(err))
                for v in config.corruptions]
    corrupt_seed = derive_seed(seed, "corrupt")
    rows = []
    for variant in config.corruptions:
        row = ResultRow("robustness", "eoppg", variant, n, r, seed, config.theta)
        try:
            spec = CorruptionSpec(frozenset(CORRUPTIONS[variant]), config.corruption_scale, corrupt_seed)
            est, ms = _timed(config, lambda: eoppg_from_nuisances(data, corrupt(nuisances, spec)).value)
            row.runtime_ms = None if ms is None else ms + fit_ms
            row.estimate = np.asarray(est, dtype=float)
            row.squared_error = float(np.sum((row.estimate - truth) ** 2))
        except Exception as err:
            row.error = _error_text(err)
        rows.append(row)
    return rows


def _run_regret_item(config: ExperimentConfig, n: int, r: int) -> list:
    bench = config.bench
    seed = data_seed(config.seed, n, r)
    data = sample_dataset(bench, bench.behavior_policy(), n, seed)
    rows = []
    for arm in config.estimators:
        row = ResultRow("regret", arm, "none", n, r, seed, float("nan"))
        try:
            asc = dataclasses.replace(config.ascent, estimator=arm, seed=seed, folds=config.folds,
                                      nuisance=config.nuisance)
            trace, row.runtime_ms = _timed(config, lambda: ascend(data, bench, asc))
            row.theta = float(trace.final[0])
            row.regret = regret(trace.final, bench)
        except Exception as err:
            row.error = _error_text(err)
        rows.append(row)
    return rows


_ITEM_RUNNERS = {"mse": _run_mse_item, "robustness": _run_robustness_item, "regret": _run_regret_item}


def _run_item(args) -> list:
    config, n, r = args
    return _ITEM_RUNNERS[config.kind](config, n, r)


def run(config: ExperimentConfig) -> list:
    """All rows of an experiment, sorted by (arm, n, replication)."""
    items = [(config, n, r) for n in config.sizes for r in range(config.replications)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(_run_item, items, chunksize=1))
    else:
        parts = [_run_item(it) for it in items]
    rows = [row for part in parts for row in part]
    return sorted(rows, key=lambda row: row.sort_key(config))


def run_mse(config: ExperimentConfig) -> list:
    return run(dataclasses.replace(config, kind="mse"))


def run_robustness(config: ExperimentConfig) -> list:
    return run(dataclasses.replace(config, kind="robustness"))


def run_regret(config: ExperimentConfig) -> list:
    return run(dataclasses.replace(config, kind="regret"))


# ----------------------------------------------------------------------------
# summaries


def failure_fraction(rows: list) -> float:
    return sum(1 for r in rows if r.error) / max(len(rows), 1)


def summarize(rows: Iterable[ResultRow], truth: Optional[np.ndarray] = None) -> list[dict]:
    """Per (estimator, corruption, n): count, failures, MSE, bias, its SE and median regret."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.estimator, r.corruption, r.n), []).append(r)
    out = []
    for (est, cor, n), rs in groups.items():
        ok = [r for r in rs if not r.error]
        entry = {"estimator": est, "corruption": cor, "n": n, "count": len(rs),
                 "failures": len(rs) - len(ok)}
        sq = [r.squared_error for r in ok if r.squared_error is not None]
        if sq:
            entry["mse"] = float(np.mean(sq))
        if truth is not None and ok and ok[0].estimate is not None:
            err = np.array([r.estimate - truth for r in ok])
            entry["bias"] = err.mean(axis=0).tolist()
            entry["bias_se"] = (err.std(axis=0, ddof=1) / np.sqrt(len(ok))).tolist() if len(ok) > 1 else None
        reg = [r.regret for r in ok if r.regret is not None]
        if reg:
            entry["median_regret"] = float(np.median(reg))
        out.append(entry)
    return out


def log_log_slope(ns, values) -> float:
    return float(np.polyfit(np.log(np.asarray(ns, dtype=float)), np.log(np.asarray(values, dtype=float)), 1)[0])
