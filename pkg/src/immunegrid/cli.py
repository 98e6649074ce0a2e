"""Batch command line: run scenarios headless, integrate the ODE baseline,
analyze event logs, list scenarios, and serve the steering protocol."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis as an
from . import kinetics as kin
from .eventlog import LogError, action_events, read_log, replay
from .runner import Runner
from .scenario import (
    BUILTIN_NAMES, KineticsSetup, ScenarioError, builtin_scenario,
    load_scenario, serialize_scenario, validate_scenario,
)

EXIT_USAGE = 2

AXES = {"x": 0, "y": 1, "z": 2, "0": 0, "1": 1, "2": 2}


def _fail(msg: str) -> int:
    print(msg, file=sys.stderr)
    return EXIT_USAGE


def _parse_axis(raw: str) -> int:
    if raw not in AXES:
        raise ValueError(f"axis must be one of x,y,z (got {raw!r})")
    return AXES[raw]


def cmd_scenarios(args) -> int:
    if args.show:
        try:
            sc = builtin_scenario(args.show)
        except ScenarioError as e:
            return _fail(str(e))
        if isinstance(sc, KineticsSetup):
            p = sc.params
            print(json.dumps({"name": sc.name, "params": p.__dict__,
                              "init": sc.init.__dict__}, indent=2))
        else:
            print(serialize_scenario(sc), end="")
        return 0
    for name in BUILTIN_NAMES:
        print(name)
    return 0


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as e:
        return _fail(f"cannot load scenario: {e}\nbuiltins: {', '.join(BUILTIN_NAMES)}")
    report = validate_scenario(scenario)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not report.ok:
        for e in report.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.ticks is not None:
        scenario.ticks = args.ticks
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "events.log")
    with open(log_path, "w") as log_fh:
        runner = Runner(scenario, args.seed, log_stream=log_fh,
                        collect_bond_events=args.log_bonds)
        next_echo = 0
        while not runner.finished:
            runner.step()
            if args.progress and runner.tick >= next_echo:
                census = runner.census_history[-1][1]
                print(f"tick {runner.tick}: " + json.dumps(census), file=sys.stderr)
                next_echo += args.progress
        final_hash = runner.finalize()

    for comp in scenario.compartments:
        header, rows = runner.census_columns(comp.name)
        path = os.path.join(args.out, f"census_{comp.name}.csv")
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(str(v) for v in row) + "\n")

    for spec in args.slice or []:
        try:
            comp, agent, axis_s, index_s = spec.split(":")
            axis, index = _parse_axis(axis_s), int(index_s)
            grid = runner.world.slice_concentration(comp, agent, axis, index)
        except (ValueError, IndexError, KeyError) as e:
            return _fail(f"bad --slice {spec!r}: {e}")
        path = os.path.join(args.out, f"slice_{agent}_{axis_s}{index}.txt")
        with open(path, "w") as fh:
            fh.write(f"# {comp} {agent} axis={axis_s} index={index} "
                     f"tick={runner.tick} shape={grid.shape[0]}x{grid.shape[1]}\n")
            np.savetxt(fh, grid, fmt="%d")

    for spec in args.profile or []:
        try:
            comp, agent, axis_s = spec.split(":")
            axis = _parse_axis(axis_s)
            prof = runner.world.profile_along(comp, agent, axis)
        except (ValueError, IndexError, KeyError) as e:
            return _fail(f"bad --profile {spec!r}: {e}")
        path = os.path.join(args.out, f"profile_{agent}_{axis_s}.txt")
        with open(path, "w") as fh:
            fh.write(f"# {comp} {agent} per-cell along {axis_s} tick={runner.tick}\n")
            np.savetxt(fh, prof, fmt="%.6g")

    print(f"finished at tick {runner.tick}; final hash {final_hash[:16]}; "
          f"outputs in {args.out}")
    return 0


def cmd_ode(args) -> int:
    if args.dt <= 0 or args.t_end <= 0:
        return _fail("--dt and --t-end must be positive")
    try:
        if args.params in ("kinetics_fig1", "kinetics_fig2"):
            setup = builtin_scenario(args.params)
            params, init = setup.params, setup.init
        else:
            with open(args.params) as fh:
                doc = json.load(fh)
            params = kin.KineticsParams(**doc["params"])
            init = kin.KineticsState(**doc["init"])
    except (OSError, KeyError, TypeError, ValueError) as e:
        return _fail(f"cannot load params {args.params!r}: {e}")
    if args.fixed_point:
        try:
            state, interior = kin.fixed_point(params)
        except ZeroDivisionError as e:
            return _fail(str(e))
        print(f"{state.I:.10g} {state.K:.10g} {state.C:.10g}")
        if not interior:
            print("note: K* < 0, infection-free regime applies", file=sys.stderr)
        return 0
    traj = kin.integrate(params, init, args.t_end, args.dt, args.method,
                         sample_every=args.sample_every)
    print("# t\tI\tK\tC")
    for t, state in zip(traj.times, traj.states):
        print(f"{t:.6g}\t{state.I:.10g}\t{state.K:.10g}\t{state.C:.10g}")
    if traj.clamped_steps:
        print(f"note: {traj.clamped_steps} steps clamped at 0", file=sys.stderr)
    return 0


def cmd_analyze(args) -> int:
    try:
        header, records = read_log(args.log)
        if args.verify:
            replay(args.log)
        events = action_events(records)
    except LogError as e:
        return _fail(str(e))
    except OSError as e:
        return _fail(f"cannot read {args.log!r}: {e}")
    if args.shuffle is not None:
        events = an.shuffle_events(events, args.shuffle)
    try:
        params = an.AnalysisParams(r0=args.r0, t0=args.t0, alpha=args.alpha,
                                   permutations=args.perms,
                                   significance=args.significance,
                                   max_levels=args.levels,
                                   min_label_count=args.min_count,
                                   seed=args.seed)
    except ValueError as e:
        return _fail(str(e))
    signature = an.multiscale_analyze(events, params)
    doc = signature.to_doc()
    doc["events"] = len(events)
    doc["log"] = os.path.basename(args.log)
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from .service import create_app
    app = create_app(data_dir=args.data_dir)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except (OSError, SystemExit) as e:
        return _fail(f"cannot serve on port {args.port}: {e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="immunegrid",
        description="rule-driven immune-system simulation engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenarios", help="list or show builtin scenarios")
    p.add_argument("--show", metavar="NAME", help="print one scenario document")
    p.set_defaults(func=cmd_scenarios)

    p = sub.add_parser("run", help="run a scenario headless")
    p.add_argument("--scenario", required=True,
                   help="builtin name or scenario file path")
    p.add_argument("--seed", required=True, type=int,
                   help="run seed (required: no hidden entropy)")
    p.add_argument("--ticks", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--slice", action="append", metavar="COMP:AGENT:AXIS:IDX",
                   help="write a final-tick slice (repeatable)")
    p.add_argument("--profile", action="append", metavar="COMP:AGENT:AXIS",
                   help="write a final-tick per-cell profile (repeatable)")
    p.add_argument("--log-bonds", action="store_true",
                   help="also record bind/unbind/decay events (large)")
    p.add_argument("--progress", type=int, default=0, metavar="N",
                   help="echo census every N ticks to stderr")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ode", help="integrate the reaction-kinetics baseline")
    p.add_argument("--params", required=True,
                   help="kinetics_fig1, kinetics_fig2, or a JSON file")
    p.add_argument("--t-end", type=float, default=3000.0)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--method", choices=("euler", "rk4"), default="rk4")
    p.add_argument("--sample-every", type=int, default=100)
    p.add_argument("--fixed-point", action="store_true",
                   help="print the analytic fixed point instead")
    p.set_defaults(func=cmd_ode)

    p = sub.add_parser("analyze", help="multiscale correlation analysis of a log")
    p.add_argument("--log", required=True)
    p.add_argument("--r0", type=float, default=3.0)
    p.add_argument("--t0", type=float, default=10.0)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--perms", type=int, default=200)
    p.add_argument("--significance", type=float, default=0.05)
    p.add_argument("--min-count", type=int, default=5,
                   help="only labels with at least this many events are tested")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shuffle", type=int, default=None, metavar="SEED",
                   help="shuffle event times within labels first (calibration)")
    p.add_argument("--verify", action="store_true",
                   help="replay the log and check its final hash first")
    p.add_argument("--out", help="also write the signature document here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="serve the run-control HTTP protocol")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8600)
    p.add_argument("--data-dir", default=None,
                   help="directory for run logs (default: in-memory)")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
