"""Command line entry point: ``gpeadapt solve --config run.cfg``."""
from __future__ import annotations

import argparse
import logging
import sys

from .driver import ConfigError, RunConfig, RunError, load_config, run
from .linalg import SolverError
from .potential import PotentialSyntaxError
from .presets import PRESETS
from .report import write_csv, write_trace_csv, write_vtk

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


def build_parser():
    parser = argparse.ArgumentParser(prog="gpeadapt",
                                     description="Adaptive gradient flow for GPE ground states")
    sub = parser.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", help="run the adaptive procedure")
    solve.add_argument("--config", help="key = value configuration file")
    solve.add_argument("--preset", choices=sorted(PRESETS))
    solve.add_argument("--max-dofs", type=int)
    solve.add_argument("--csv", help="per-space summary CSV")
    solve.add_argument("--trace-csv", help="per-iteration energy trace CSV")
    solve.add_argument("--vtk-every", type=int, metavar="K",
                       help="write a VTK file for every K-th space and the last one")
    solve.add_argument("--quiet", action="store_true")
    return parser


def _config_from_args(args) -> RunConfig:
    if args.config:
        config = load_config(args.config, args.preset)
    elif args.preset:
        config = RunConfig.from_preset(args.preset)
    else:
        raise ConfigError("give --config or --preset")
    for attr in ("max_dofs", "csv", "trace_csv", "vtk_every"):
        value = getattr(args, attr)
        if value is not None:
            setattr(config, attr, value)
    config.validate()
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    try:
        config = _config_from_args(args)
    except (ConfigError, PotentialSyntaxError, OSError) as exc:
        print(f"gpeadapt: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    def dump(event, index, space, state):
        if event == "done" and config.vtk_every and index % config.vtk_every == 0:
            write_vtk(space, state.u, f"{config.vtk_prefix}_{index:03d}.vtk")

    try:
        report = run(config, dump)
    except (ConfigError, PotentialSyntaxError) as exc:
        print(f"gpeadapt: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunError, SolverError) as exc:
        print(f"gpeadapt: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    if config.vtk_every and report.final.space % config.vtk_every != 0:
        write_vtk(report.final_space, report.final_state.u,
                  f"{config.vtk_prefix}_{report.final.space:03d}.vtk")
    if config.csv:
        write_csv(report, config.csv)
    if config.trace_csv:
        write_trace_csv(report, config.trace_csv)
    final = report.final
    if not args.quiet:
        print(f"{config.name}: {report.termination} after {len(report.records)} spaces, "
              f"dofs={final.dofs} E={final.energy:.10f} lambda={final.lam:.10f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
