"""Command-line entry point.

    attackmdp validate <grid>
    attackmdp solve <scenario> [--out DIR] [--mode dc|ac] [--verbose]
    attackmdp sweep <scenario> --c-values 0,1,2 [--out DIR]

Exit codes: 0 success, 1 pipeline failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

from . import grid as gridmod
from .analysis import format_report
from .pipeline import PipelineError, Solution, build_model, read_scenario, solve, sweep_detect_c

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_validate(path: str) -> int:
    p = Path(path)
    if not p.is_file():
        _err(f"error[io]: no such file: {path}")
        return EXIT_USAGE
    try:
        grid = gridmod.load_grid(p.read_text(), check=False)
    except gridmod.GridError as exc:
        _err(f"error[grid]: {exc}")
        return EXIT_FAIL
    diags = gridmod.validate(grid)
    for d in diags:
        _err(str(d))
    if not diags:
        print(f"ok: {grid.n_buses} buses, {len(grid.lines)} lines, "
              f"{len(grid.generators)} generators, {len(grid.devices)} devices")
    return EXIT_FAIL if diags else EXIT_OK


def _load_config(args):
    path = Path(args.scenario)
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        cfg = read_scenario(path)
    except (ValueError, OSError) as exc:
        raise UsageError(str(exc)) from None
    changes = {}
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _write(path: Path, lines: list[str]) -> None:
    path.write_text("\n".join(lines) + "\n")


def write_solution(out: Path, model, sol: Solution) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "values.csv", ["state,q"] + [f"{s},{q:.12f}" for s, q in enumerate(sol.values.q)])
    rows = ["state,load_idx,device_open,action_index,action"]
    for s in model.space:
        load = "-".join(map(str, s.load_idx))
        dev = "".join("1" if o else "0" for o in s.device_open)
        rows.append(f"{s.index},{load},{dev},{sol.policy.choice[s.index]},"
                    f"{sol.report.actions[s.index]}")
    _write(out / "policy.csv", rows)
    (out / "report.csv").write_text(format_report([sol.report]))


def _summary(model, sol: Solution, verbose: bool) -> None:
    print(f"C={sol.c:g}: {len(model.space)} states, {sol.tm.n_pairs} state-action pairs, "
          f"{sol.report.n_attacking_states} attacking states; "
          f"solve {sum(sol.timings.values()):.3f}s")
    if verbose:
        print(f"  lp: iterations={sol.values.iterations} bellman-residual={sol.values.residual:.3e}")
        print(f"  vi: sweeps={sol.vi_values.iterations} step={sol.vi_values.residual:.3e} "
              f"|lp-vi|={sol.lp_vi_gap:.3e}")
        st = sol.stationary
        print(f"  stationary: method={st.method} iterations={st.iterations} "
              f"residual={st.residual:.3e} closed-classes={st.n_closed_classes}")
        for w in model.warnings:
            print(f"  warning: {w}")


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    t0 = time.perf_counter()
    try:
        model = build_model(cfg)
        sol = solve(model)
    except PipelineError as exc:
        _err(f"error[{exc.stage}]: {exc}")
        return EXIT_FAIL
    write_solution(Path(cfg.out_dir), model, sol)
    _summary(model, sol, args.verbose)
    print(f"wrote values.csv, policy.csv, report.csv to {cfg.out_dir} "
          f"({time.perf_counter() - t0:.3f}s)")
    return EXIT_OK


def parse_c_values(text: str) -> list[float]:
    parts = [p.strip() for p in (text or "").split(",") if p.strip()]
    if not parts:
        raise UsageError("--c-values needs at least one value")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"--c-values: not a number list: {text!r}") from None
    if any(v < 0 or v != v for v in vals):
        raise UsageError("--c-values must be nonnegative")
    return vals


def cmd_sweep(args) -> int:
    c_values = parse_c_values(args.c_values)
    cfg = _load_config(args)
    try:
        model = build_model(cfg)
    except PipelineError as exc:
        _err(f"error[{exc.stage}]: {exc}")
        return EXIT_FAIL
    entries = sweep_detect_c(cfg, c_values, model)
    ok = [e for e in entries if e.solution is not None]
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep_report.csv").write_text(format_report([e.solution.report for e in ok]))
    rows = ["c,state,action_index,action"]
    for e in ok:
        rows += [f"{e.c:g},{s},{e.solution.policy.choice[s]},{a}"
                 for s, a in enumerate(e.solution.report.actions)]
    _write(out / "sweep_policies.csv", rows)
    for e in entries:
        if e.error is not None:
            _err(f"error[{e.error.stage}] at C={e.c:g}: {e.error}")
        else:
            _summary(model, e.solution, args.verbose)
    print(f"wrote sweep_report.csv, sweep_policies.csv to {cfg.out_dir}")
    return EXIT_OK if len(ok) == len(entries) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--mode", choices=["dc", "ac"], default=argparse.SUPPRESS)
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="attackmdp", parents=[common],
                                     description="Optimal data-injection attack MDP on a power grid")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate", parents=[common], help="check a grid file")
    p.add_argument("grid")
    p = sub.add_parser("solve", parents=[common], help="solve one scenario")
    p.add_argument("scenario")
    p = sub.add_parser("sweep", parents=[common], help="sweep the detection constant C")
    p.add_argument("scenario")
    p.add_argument("--c-values", required=True, help="comma-separated list, e.g. 0,1,2")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    for key, default in (("out", None), ("mode", None), ("verbose", False)):
        if not hasattr(args, key):
            setattr(args, key, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args.grid)
        if args.command == "solve":
            return cmd_solve(args)
        return cmd_sweep(args)
    except UsageError as exc:
        _err(f"error[usage]: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
