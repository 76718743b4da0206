"""Command-line entry points.

Subcommands: `run` (seeded trajectories to CSV), `speedup` (batch-size
scaling experiment), `ablation` (optimizer grid), `check` (invariant
suite). Exit codes: 0 success, 1 usage/config error, 2 invariant failure,
3 numeric failure (NaN/Inf).
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .config import ExperimentSpec, apply_overrides, build_spec, load_config
from .errors import (
    ConfigError,
    InvariantViolationError,
    NonFiniteGradientError,
    OptkitError,
)
from .experiments import (
    CHECK_SUITES,
    check,
    run_ablation,
    run_experiment,
    run_speedup,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the CLI contract reserves 2 for
    # invariant failures, so usage problems are rethrown as config errors.
    def error(self, message: str):
        raise ConfigError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="experiment config file")
    parser.add_argument("--seed", type=int, help="replace run.seeds with one seed")
    parser.add_argument("--out", help="override output.path")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable, last writer wins)",
    )


def _spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    raw = load_config(args.config)
    raw = apply_overrides(raw, args.override)
    if args.seed is not None:
        raw["run.seeds"] = str(args.seed)
    if args.out is not None:
        raw["output.path"] = args.out
    return build_spec(raw)


def _build_parser() -> _Parser:
    parser = _Parser(prog="optkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("run", help="run seeded trajectories to CSV"))

    speedup = sub.add_parser("speedup", help="batch-size speedup experiment")
    _add_common(speedup)
    speedup.add_argument("--threshold", type=float, help="stationarity threshold")

    _add_common(sub.add_parser("ablation", help="optimizer/momentum grid"))

    chk = sub.add_parser("check", help="run the invariant check suite")
    chk.add_argument(
        "suite",
        nargs="?",
        default="all",
        help=f"one of {('all',) + CHECK_SUITES}",
    )
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    result = run_experiment(_spec_from_args(args))
    for path in result.trajectory_paths:
        print(f"wrote {path}")
    print(f"wrote {result.summary_path}")
    print(f"seeds: {len(result.seeds)}")
    print(f"mean final loss: {result.mean_final_loss:.6g}")
    print(f"mean grad-norm metric (1/T sum ||grad||^2): "
          f"{result.mean_grad_norm_metric:.6g}")
    if result.outside_box_steps:
        print(
            f"note: {result.outside_box_steps} recorded steps left the "
            "declared trajectory box; reported gradient bounds do not "
            "apply there"
        )
    return EXIT_OK


def _cmd_speedup(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    result = run_speedup(spec, threshold=args.threshold)
    print(f"threshold: {result.threshold:.17g}")
    print(f"{'batch_size':>10} {'steps_to_threshold':>20} {'final_metric':>14}")
    for row in result.rows:
        steps = row.steps_to_threshold
        print(
            f"{row.batch_size:>10} "
            f"{steps if steps is not None else 'not reached':>20} "
            f"{row.final_metric:>14.6g}"
        )
    if result.loglog_slope is not None:
        print(f"log-log slope of steps vs batch size: {result.loglog_slope:.4f}")
    if result.csv_path is not None:
        print(f"wrote {result.csv_path}")
    return EXIT_OK


def _cmd_ablation(args: argparse.Namespace) -> int:
    result = run_ablation(_spec_from_args(args))
    print(f"{'optimizer':>10} {'beta1':>6} {'mean_final_loss':>16}")
    for row in result.rows:
        print(
            f"{row.optimizer_kind:>10} {row.beta1:>6.1f} "
            f"{row.mean_final_loss:>16.6g}"
        )
    if result.csv_path is not None:
        print(f"wrote {result.csv_path}")
    return EXIT_OK


def _cmd_check(args: argparse.Namespace) -> int:
    result = check(args.suite)
    for outcome in result.outcomes:
        status = "PASS" if outcome.passed else "FAIL"
        print(f"[{status}] {outcome.name}: {outcome.detail}")
    return EXIT_OK if result.passed else EXIT_INVARIANT


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "speedup":
            return _cmd_speedup(args)
        if args.command == "ablation":
            return _cmd_ablation(args)
        return _cmd_check(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolationError as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except NonFiniteGradientError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OptkitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
