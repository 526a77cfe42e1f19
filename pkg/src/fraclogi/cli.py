"""Command line entry point.

    fraclogi <mode> --config <path> [--out DIR] [--seed N] [--threads N]
    fraclogi scenario <name> [--out DIR] [--no-figures]

Exit status: 0 success, 1 scenario or verification predicate failed,
2 invalid configuration, 3 solver failure, 4 inconclusive classification.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from fraclogi.config import MODES, ConfigError
from fraclogi.runner import EXIT_OK, EXIT_PREDICATE, EXIT_SOLVER, EXIT_VALIDATION, load_any, run


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fraclogi", description="Fractional p-Laplacian logistic problems.")
    sub = ap.add_subparsers(dest="command", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run mode '{mode}' from a config file")
        p.add_argument("--config", required=True, help="TOML config or a previous manifest.json")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides seed)")
        p.add_argument("--threads", type=int, help="recorded in the manifest; runs are single threaded")
    from fraclogi.scenarios import SCENARIOS

    p = sub.add_parser("scenario", help="run a pre-configured experiment and check its predicate")
    p.add_argument("name", choices=[*SCENARIOS, "all"])
    p.add_argument("--out", default="scenarios", help="parent output directory")
    p.add_argument("--no-figures", action="store_true")
    return ap


def _run_mode(args) -> int:
    try:
        cfg = load_any(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    cfg = dataclasses.replace(cfg, mode=args.command)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    result = run(cfg, Path(args.out) if args.out else None, threads=args.threads)
    err = result.report.get("error")
    if err:
        print(f"error: {err['message']}", file=sys.stderr)
    print(f"{args.command}: exit {result.code}, outputs in {result.out_dir}")
    return result.code


def _run_scenarios(args) -> int:
    from fraclogi.elliptic import SolverError
    from fraclogi.parabolic import EvolveError
    from fraclogi.scenarios import SCENARIOS, reference_setup, run_scenario

    names = list(SCENARIOS) if args.name == "all" else [args.name]
    setup = reference_setup()
    code = EXIT_OK
    for name in names:
        try:
            rep = run_scenario(name, args.out, figures=not args.no_figures, setup=setup)
        except (SolverError, EvolveError) as exc:
            print(f"{name}: ERROR {exc}")
            code = max(code, EXIT_SOLVER)
            continue
        print(f"{name}: {'PASS' if rep.passed else 'FAIL'} ({rep.wall_time:.1f} s, {Path(args.out) / name})")
        for key, ok in rep.predicates.items():
            print(f"  {'ok ' if ok else 'BAD'} {key}")
        if not rep.passed:
            code = max(code, EXIT_PREDICATE)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "scenario":
        return _run_scenarios(args)
    return _run_mode(args)


if __name__ == "__main__":
    sys.exit(main())
