"""Command line entry points.

``flowgate simulate`` runs replications of one (controller, limit) pair;
``flowgate experiment --grid`` runs the full controller x flow-limit grid.
Both write the delimited outputs plus rendered figures into --out.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

from .harness import (
    CONTROLLERS,
    ExperimentResult,
    aggregate_runs,
    emit_outputs,
    limit_label,
    replication_seed,
    run_experiment,
    run_replication,
)
from .model import ScenarioError, default_scenario_path, load_scenario


def _parse_limit(text: str) -> Optional[float]:
    if text.lower() in ("none", "off"):
        return None
    try:
        value = float(text)
    except ValueError:
        raise ScenarioError(f"--limit must be a number of veh/hr or 'none', got {text!r}")
    if value < 0:
        raise ScenarioError("--limit must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowgate",
        description="Intersection simulator with auction-based signal control "
        "and perimeter flow metering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one controller/limit combination")
    sim.add_argument("--scenario", default=None, help="scenario JSON (default: shipped test case)")
    sim.add_argument("--controller", required=True, choices=CONTROLLERS)
    sim.add_argument("--limit", default=None,
                     help="hourly inflow limit in veh/hr, or 'none' (default: scenario value)")
    sim.add_argument("--reps", type=int, default=1, help="replications (default 1)")
    sim.add_argument("--seed", type=int, default=None, help="base seed (default: scenario value)")
    sim.add_argument("--out", default="out", help="output directory (default ./out)")
    sim.add_argument("--trace-auctions", action="store_true",
                     help="write per-replication event logs including auction diagnostics")
    sim.add_argument("--force", action="store_true", help="overwrite existing outputs")
    sim.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    exp = sub.add_parser("experiment", help="run the full controller x limit grid")
    exp.add_argument("--scenario", default=None, help="scenario JSON (default: shipped test case)")
    exp.add_argument("--grid", action="store_true",
                     help="run the full grid (this is also the default behaviour)")
    exp.add_argument("--reps", type=int, default=None,
                     help="replications per combination (default: scenario value)")
    exp.add_argument("--seed", type=int, default=None, help="base seed (default: scenario value)")
    exp.add_argument("--out", default="out", help="output directory (default ./out)")
    exp.add_argument("--force", action="store_true", help="overwrite existing outputs")
    exp.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    exp.add_argument("--quiet", action="store_true", help="suppress progress lines")
    return parser


def _load(args):
    path = args.scenario if args.scenario is not None else default_scenario_path()
    return load_scenario(path)


def _cmd_simulate(args) -> int:
    scenario = _load(args)
    if args.limit is None:
        limit = scenario.metering.inflow_limit_veh_hr
    else:
        limit = _parse_limit(args.limit)
    base_seed = args.seed if args.seed is not None else scenario.experiment.base_seed
    if args.reps < 1:
        raise ScenarioError("--reps must be >= 1")

    runs = []
    trace_dir = os.path.join(args.out, "events")
    for i in range(args.reps):
        seed = replication_seed(base_seed, i)
        print(f"run {args.controller} limit={limit_label(limit)} rep={i} seed={seed}", flush=True)
        if args.trace_auctions:
            os.makedirs(trace_dir, exist_ok=True)
            name = f"{args.controller}_{limit_label(limit)}_rep{i}.log"
            with open(os.path.join(trace_dir, name), "w", encoding="utf-8") as stream:
                runs.append(
                    run_replication(scenario, args.controller, limit, seed,
                                    trace_auctions=True, event_stream=stream)
                )
        else:
            runs.append(run_replication(scenario, args.controller, limit, seed))
    result = ExperimentResult(scenario=scenario, aggregates=[aggregate_runs(runs)])
    written = emit_outputs(result, args.out, force=args.force, plots=not args.no_plots)
    print(f"wrote {len(written)} files under {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    scenario = _load(args)
    progress = None if args.quiet else lambda msg: print(msg, flush=True)
    result = run_experiment(
        scenario,
        controllers=CONTROLLERS,
        limits=list(scenario.experiment.flow_limits_veh_hr),
        n_reps=args.reps,
        base_seed=args.seed,
        progress=progress,
    )
    written = emit_outputs(result, args.out, force=args.force, plots=not args.no_plots)
    print(f"wrote {len(written)} files under {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        return _cmd_experiment(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
