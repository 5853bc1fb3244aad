"""Command-line interface: run experiments, regenerate plots, self-check."""
from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .harness import (
    ConfigError,
    ExperimentConfig,
    make_plots,
    read_runs_csv,
    run_experiment,
)


def _add_run_parser(sub):
    p = sub.add_parser("run", help="execute the cart-pole benchmark and emit CSV/SVG artifacts")
    p.add_argument("--config", help="YAML config file (defaults used when omitted)")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--scale", type=float, help="nominal parameter scale factor (e.g. 0.75 or 0.55)")
    p.add_argument("--controllers", help="comma-separated controller names (koopman,nominal,rff,oracle)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--runs", type=int, help="number of seeded runs")
    p.add_argument("--duration", type=float, help="run duration in seconds")
    p.add_argument("--residual-mode", choices=["propagate", "hold_constant"])
    p.add_argument("--no-plots", action="store_true", help="skip SVG generation")


def _add_plot_parser(sub):
    p = sub.add_parser("plot", help="regenerate SVG plots from an existing runs.csv")
    p.add_argument("--out", default="results", help="directory holding runs.csv")
    p.add_argument("--dt", type=float, default=1.0 / 15.0, help="control period used in the run")


def _add_check_parser(sub):
    sub.add_parser("check", help="run the built-in oracle self-checks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopman-mpc",
        description="MPC with online Koopman learning of residual dynamics (cart-pole benchmark)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_parser(sub)
    _add_plot_parser(sub)
    _add_check_parser(sub)
    return parser


def cmd_run(args) -> int:
    try:
        if args.config:
            config = ExperimentConfig.from_yaml(args.config)
        else:
            config = ExperimentConfig()
        overrides = {}
        if args.scale is not None:
            overrides["nominal_scale"] = args.scale
        if args.controllers is not None:
            overrides["controllers"] = tuple(args.controllers.split(","))
        if args.seed is not None:
            overrides["base_seed"] = args.seed
        if args.runs is not None:
            overrides["run_count"] = args.runs
        if args.duration is not None:
            overrides["duration"] = args.duration
        if args.residual_mode is not None:
            overrides["residual_mode"] = args.residual_mode
        if overrides:
            data = config.to_dict()
            data.update(overrides)
            config = ExperimentConfig.from_dict(data)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    artifact = run_experiment(config, args.out, plots=not args.no_plots)
    print(f"wrote {artifact.runs_csv}")
    print(f"wrote {artifact.aggregate_csv}")
    for p in artifact.plot_paths:
        print(f"wrote {p}")
    if artifact.failures:
        for f in artifact.failures:
            print(f"run {f['run']} controller {f['controller']} FAILED: {f['error']}", file=sys.stderr)
        return 1
    return 0


def cmd_plot(args) -> int:
    import os

    runs_csv = os.path.join(args.out, "runs.csv")
    if not os.path.exists(runs_csv):
        print(f"config error: no runs.csv in {args.out}", file=sys.stderr)
        return 2
    logs = read_runs_csv(runs_csv)
    for p in make_plots(args.out, logs, args.dt):
        print(f"wrote {p}")
    return 0


def cmd_check(args) -> int:
    """Quick oracle self-checks: OGD gradient, Riccati/iLQR match, RK4 order."""
    from .selfcheck import run_selfchecks

    results = run_selfchecks()
    failed = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {name}: {detail}")
        failed += 0 if ok else 1
    return 0 if failed == 0 else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.time()
    if args.command == "run":
        code = cmd_run(args)
    elif args.command == "plot":
        code = cmd_plot(args)
    else:
        code = cmd_check(args)
    print(f"done in {time.time() - start:.1f}s (exit {code})")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
