"""Command-line entry points.

    bandplan run <scenario.json> [--trials N] [--seed S] [--out DIR] [--workers W]
    bandplan plot <trajectory.jsonl> --out DIR
    bandplan validate <scenario.json>

Exit codes: 0 all trials succeeded, 1 at least one failure, 2 configuration
error (bad scenario or malformed log).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .batch import run_batch
from .plots import LogFormatError, emit_plot_data
from .scenario import ScenarioError, load_scenario


def _cmd_run(args) -> int:
    try:
        scn = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    default_trials, default_seed = scn.trials
    trials = args.trials if args.trials is not None else default_trials
    seed = args.seed if args.seed is not None else default_seed
    out = Path(args.out)
    outcomes = run_batch(scn, trials, seed, out, workers=args.workers)
    n_ok = sum(1 for o in outcomes if o.result.outcome == "success")
    n_plans = sum(o.result.planner_invocations for o in outcomes)
    print(f"{scn.name}: {n_ok}/{trials} trials succeeded, {n_plans} planner invocations total")
    print(f"stats: {out / 'stats.csv'}")
    return 0 if n_ok == trials else 1


def _cmd_plot(args) -> int:
    try:
        written = emit_plot_data(args.log, args.out)
    except LogFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for p in written:
        print(p)
    return 0


def _cmd_validate(args) -> int:
    try:
        scn = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    n_targets = len(scn.raw["task"]["targets"])
    print(f"ok: {scn.name} ({scn.raw['object']['kind']}, {n_targets} targets)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bandplan", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run seeded trials of a scenario")
    p_run.add_argument("scenario", help="scenario JSON file")
    p_run.add_argument("--trials", type=int, default=None, help="number of trials (default: scenario)")
    p_run.add_argument("--seed", type=int, default=None, help="base seed (default: scenario)")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--workers", type=int, default=None, help="process pool size")
    p_run.set_defaults(func=_cmd_run)

    p_plot = sub.add_parser("plot", help="emit plot CSVs and figures from a trajectory log")
    p_plot.add_argument("log", help="trajectory .jsonl file")
    p_plot.add_argument("--out", default="plots", help="output directory")
    p_plot.set_defaults(func=_cmd_plot)

    p_val = sub.add_parser("validate", help="schema-check a scenario file")
    p_val.add_argument("scenario", help="scenario JSON file")
    p_val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
