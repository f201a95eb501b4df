"""Command line entry point.

    eoppg mse --preset ci --out mse.csv
    eoppg robustness --config robust.yaml --workers 4
    eoppg regret --preset full --seed 7
    eoppg ascend --n 800 --out trace.csv
    eoppg oracle --theta 0.8 --horizon 50

Exit codes: 0 success, 1 configuration error, 2 too many estimator failures.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .env import LQBenchmark, analytic_gradient, analytic_value, sample_dataset
from .experiments import (ConfigError, ExperimentConfig, failure_fraction, load_config,
                          preset_config, run, summarize, write_rows)
from .optimizer import AscentConfig, AscentError, ascend, regret

log = logging.getLogger("eoppg")

EXIT_OK, EXIT_CONFIG, EXIT_FAILURES = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eoppg", description="Off-policy policy-gradient experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    for kind in ("mse", "robustness", "regret"):
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--preset", choices=("ci", "full"), default=None,
                       help="base settings (default: ci when no config is given)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="CSV output path (default: stdout)")
        p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("ascend", help="one projected gradient ascent run on a fresh dataset")
    p.add_argument("--n", type=int, default=800)
    p.add_argument("--horizon", type=int, default=20)
    p.add_argument("--estimator", default="eoppg")
    p.add_argument("--theta1", type=float, default=0.2)
    p.add_argument("--alpha", type=float, default=0.15)
    p.add_argument("--iterations", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="trace CSV path (default: stdout)")

    p = sub.add_parser("oracle", help="print the analytic value and gradient")
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--sigma", type=float, default=0.2)
    return parser


def _experiment_config(args) -> ExperimentConfig:
    overrides = {k: v for k, v in (("seed", args.seed), ("out", args.out), ("workers", args.workers))
                 if v is not None}
    if args.config:
        return load_config(args.config, kind=args.command, preset=args.preset, **overrides)
    return preset_config(args.preset or "ci", args.command, **overrides)


def _run_experiment(args) -> int:
    config = _experiment_config(args)
    rows = run(config)
    dim = next((len(r.estimate) for r in rows if r.estimate is not None), 1)
    if config.out:
        with open(config.out, "w", newline="") as fh:
            write_rows(rows, fh, dim)
    else:
        write_rows(rows, sys.stdout, dim)
    truth = np.atleast_1d(analytic_gradient(config.theta, config.bench))
    for s in summarize(rows, truth if config.kind != "regret" else None):
        log.info("%s", s)
    frac = failure_fraction(rows)
    if frac > config.failure_tolerance:
        log.error("%.1f%% of rows failed (tolerance %.1f%%)", 100 * frac, 100 * config.failure_tolerance)
        return EXIT_FAILURES
    return EXIT_OK


def _run_ascend(args) -> int:
    bench = LQBenchmark(horizon=args.horizon)
    config = AscentConfig(theta1=args.theta1, alpha=args.alpha, iterations=args.iterations,
                          estimator=args.estimator, seed=args.seed)
    data = sample_dataset(bench, bench.behavior_policy(), args.n, args.seed)
    try:
        trace = ascend(data, bench, config)
    except AscentError as err:
        log.error("%s", err)
        return EXIT_FAILURES
    if args.out:
        trace.to_csv(args.out, bench)
    else:
        trace.write_csv(sys.stdout, bench)
    log.info("final theta %.6f, regret %.3e", trace.final[0], regret(trace.final, bench))
    return EXIT_OK


def _run_oracle(args) -> int:
    bench = LQBenchmark(horizon=args.horizon, sigma=args.sigma)
    # adding 0.0 turns -0.0 into 0.0
    J, dJ, best = (float(x) + 0.0 for x in (analytic_value(args.theta, bench),
                                             analytic_gradient(args.theta, bench),
                                             analytic_value(1.0, bench)))
    print(f"theta={args.theta!r} J={J!r} dJ={dJ!r} J*={best!r}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ascend":
            return _run_ascend(args)
        if args.command == "oracle":
            return _run_oracle(args)
        return _run_experiment(args)
    except (ConfigError, ValueError) as err:
        log.error("configuration error: %s", err)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
