#!/usr/bin/env python3
"""
Command-line driver for the multigrid experiments

Subcommands:
    solve        manufactured-solution solves with L2 errors
    table        iteration-count tables (presets: degrees, geometry, nc, vcycle)
    ghost-sweep  fractional iteration counts over gamma_k (--sequential pins each order's best)
    throughput   DoF/s of operator apply and full solve
    geometry     per-level geometry and DoF counts, cut rule dumps, matrix triplets
    verify       property suite; exit code 1 on any failure
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

# Load .env before any module reads CUTMG_* variables
load_dotenv(override=False)

sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from config import (GHOST_SWEEP_VALUES, ConfigError, ExperimentConfig, apply_overrides, load_config_file,
                    parse_floats, parse_levels)
from harness import (TABLE_PRESETS, run_geometry_report, run_ghost_sweep, run_sequential_ghost_sweep, run_solve,
                     run_table, run_throughput, verify)

LOG_LEVEL_ENV_VAR = 'CUTMG_LOG_LEVEL'

logger = logging.getLogger('run_experiments')


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='JSON file with ExperimentConfig fields')
    parser.add_argument('--geometry', choices=('circle', 'square'))
    parser.add_argument('--degree', type=int, choices=(1, 2, 3))
    parser.add_argument('--degrees', help="Degrees for table columns, e.g. '1,2,3'")
    parser.add_argument('--levels', help="Level range '4-6' or list '4,5,6'")
    parser.add_argument('--smoother', choices=('mvs', 'chebyshev'))
    parser.add_argument('--nc', dest='n_c', type=int, help='Cut-patch sweeps per smoothing step')
    parser.add_argument('--gamma-d', dest='gamma_d', type=float, help='Nitsche penalty (default 5 p^2)')
    parser.add_argument('--gamma-k', dest='gamma_k', help="Ghost coefficients, e.g. '0.08,0.08'")
    parser.add_argument('--solver', choices=('gmres', 'vcycle'))
    parser.add_argument('--tol', type=float)
    parser.add_argument('--max-it', dest='max_it', type=int)
    parser.add_argument('--threads', type=int, help='Worker threads (default: CUTMG_THREADS or 1)')
    parser.add_argument('--out', dest='output_dir', help='Output directory (default: CUTMG_OUTPUT_DIR or results)')
    parser.add_argument('--allow-indefinite', dest='allow_indefinite', action='store_true', default=None,
                        help='Accept gamma_d <= 0')
    parser.add_argument('--log-level', default=os.getenv(LOG_LEVEL_ENV_VAR, 'INFO'))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Unfitted-domain multigrid experiments')
    subparsers = parser.add_subparsers(dest='command', required=True)

    _add_common(subparsers.add_parser('solve', help='Solve the manufactured problem'))

    table = subparsers.add_parser('table', help='Iteration-count table')
    _add_common(table)
    table.add_argument('--preset', choices=TABLE_PRESETS, default='degrees')

    sweep = subparsers.add_parser('ghost-sweep', help='Fractional counts over gamma_k')
    _add_common(sweep)
    sweep.add_argument('--order', type=int, choices=(1, 2, 3),
                       help='Swept order (default: --degree, or the highest of --degrees with --sequential)')
    sweep.add_argument('--values', help='Swept gamma values (default 0.05..0.15)')
    sweep.add_argument('--sequential', action='store_true',
                       help='Sweep orders 1..--order in turn, pinning the best gamma of each order')

    throughput = subparsers.add_parser('throughput', help='Apply and solve throughput')
    _add_common(throughput)
    throughput.add_argument('--warmups', type=int, default=2)
    throughput.add_argument('--repeats', type=int, default=5)

    geometry = subparsers.add_parser('geometry', help='Geometry, DoF and quadrature reports')
    _add_common(geometry)
    geometry.add_argument('--matrix-level', dest='matrix_level', type=int,
                          help='Level whose matrix is exported (default: coarsest of --levels)')

    check = subparsers.add_parser('verify', help='Run the property suite')
    _add_common(check)
    check.add_argument('--level', type=int, default=3)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (or defaults) with command-line overrides applied"""
    config = load_config_file(args.config) if args.config else ExperimentConfig()
    return apply_overrides(
        config,
        geometry=args.geometry,
        degree=args.degree,
        degrees=parse_levels(args.degrees) if args.degrees else None,
        levels=parse_levels(args.levels) if args.levels else None,
        smoother=args.smoother,
        n_c=args.n_c,
        gamma_d=args.gamma_d,
        gamma_k=parse_floats(args.gamma_k) if args.gamma_k else None,
        solver=args.solver,
        tol=args.tol,
        max_it=args.max_it,
        threads=args.threads,
        output_dir=args.output_dir,
        allow_indefinite=args.allow_indefinite,
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        config = config_from_args(args)
        if args.command == 'solve':
            print(run_solve(config).to_string(index=False))
        elif args.command == 'table':
            print(run_table(config, preset=args.preset).to_markdown(index=False))
        elif args.command == 'ghost-sweep':
            values = parse_floats(args.values) if args.values else GHOST_SWEEP_VALUES
            if args.sequential:
                sweep = run_sequential_ghost_sweep(config, max_order=args.order, gammas=values)
                for order, table in sweep.tables.items():
                    print(f"gamma_{order} with Q{order}:")
                    print(table.to_markdown(index=False))
                print(sweep.choices.to_markdown(index=False))
            else:
                print(run_ghost_sweep(config, order=args.order, gammas=values).to_markdown(index=False))
        elif args.command == 'throughput':
            print(run_throughput(config, warmups=args.warmups, repeats=args.repeats).to_string(index=False))
        elif args.command == 'geometry':
            print(run_geometry_report(config, matrix_level=args.matrix_level).summary())
        elif args.command == 'verify':
            report = verify(config, level=args.level)
            print(report.summary())
            return 0 if report.passed else 1
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == '__main__':
    sys.exit(main())
