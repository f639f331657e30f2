#!/usr/bin/env python3
"""
Command-line entry for the cylinder benchmark.

    python cli.py mesh --h-max 8 --out meshes/h8.nsmesh
    python cli.py run --config configs/re120_gdTH_4.env
    python cli.py run --config configs/re120_gdTH_4.env --resume
    python cli.py analyze --trace runs/x/trace.csv --window 280 480 --initial-guess 11.3
    python cli.py sweep --config configs/sweep_chaos_onset.env --reynolds 1100 1125 1150 1175 1200

Exit codes: 0 success, 2 usage or invalid input, 3 numerical failure.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from utils.checkpoint_utils import CheckpointError
from utils.config_utils import MeshSettings, load_run_config, parse_overrides
from utils.geometry_utils import DomainSpec, build_domain
from utils.io_utils import read_trace, write_json
from utils.linsolve_utils import SingularMatrixError
from utils.mesh_utils import MeshGenerationError, generate_mesh, log_mesh_report, mesh_statistics, save_mesh
from utils.run_processor import RunProcessor, SweepProcessor, analyze_trace, write_analysis_plots
from utils.scheme_utils import SchemeError
from utils.strouhal_utils import NoPeriodDetected, StrouhalAnalyzer

logger = logging.getLogger("nsbench")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _setup_logging() -> None:
    load_dotenv()
    level = os.getenv("NSBENCH_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def cmd_mesh(args: argparse.Namespace) -> int:
    settings = MeshSettings(
        h_max=args.h_max,
        grading_ratio=args.grading,
        geometry_order=args.geometry_order,
        grading_law=args.grading_law,
    )
    mesh = generate_mesh(build_domain(DomainSpec()), settings.params())
    log_mesh_report(mesh)
    save_mesh(mesh, args.out)
    if args.stats:
        write_json(args.stats, mesh_statistics(mesh))
    logger.info(f"Mesh written to {args.out}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, parse_overrides(args.set))
    resume = True if args.resume == "latest" else args.resume
    summary = RunProcessor(config, mesh_path=args.mesh).run(resume=resume)
    period = summary.get("period") or {}
    logger.info(
        f"{summary['run']}: mean drag {summary.get('mean_drag', float('nan')):.6g}, "
        f"period {period.get('mean_period', float('nan')):.6g}, steps {summary['steps']}"
    )
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    trace = read_trace(args.trace)
    window = tuple(args.window)
    analyzer = StrouhalAnalyzer(scaling=args.scaling, bins=args.bins)
    estimate, result = analyze_trace(trace, window, args.initial_guess, analyzer)
    out_dir = Path(args.out) if args.out else Path(args.trace).parent
    write_json(out_dir / "period.json", result)
    write_analysis_plots(trace.window(*window), estimate, out_dir, Path(args.trace).parent.name)
    logger.info(
        f"Period {result['mean_period']:.6g} +- {result['std_period']:.3g} "
        f"(St {result['strouhal']:.5g}, {result['classification']})"
    )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, parse_overrides(args.set))
    rows = SweepProcessor(config, args.reynolds, workers=args.workers, mesh_path=args.mesh).run()
    for row in rows:
        logger.info(f"Re={row['reynolds']:g}: {row['status']} {row.get('classification') or ''}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsbench", description="2D flow-around-cylinder benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="generate a graded cylinder mesh")
    p.add_argument("--h-max", type=float, required=True)
    p.add_argument("--grading", type=float, default=250.0, help="h_max / h_min")
    p.add_argument("--geometry-order", type=int, default=4)
    p.add_argument("--grading-law", choices=("linear", "log-linear"), default="log-linear")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", help="optional JSON file for mesh statistics")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("run", help="time-integrate one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--mesh")
    p.add_argument("--resume", nargs="?", const="latest", help="checkpoint file, or latest when no value")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="estimate the shedding period of a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--window", type=float, nargs=2, default=(280.0, 480.0), metavar=("T_START", "T_END"))
    p.add_argument("--initial-guess", type=float, default=11.3)
    p.add_argument("--scaling", choices=("standardize", "raw"), default="standardize")
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--out", help="output directory (default: next to the trace)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="independent runs over a Reynolds list")
    p.add_argument("--config", required=True)
    p.add_argument("--reynolds", type=float, nargs="*", default=[])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--mesh")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return args.func(args)
    except (SchemeError, SingularMatrixError, MeshGenerationError, NoPeriodDetected) as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except (ValueError, CheckpointError, FileNotFoundError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
