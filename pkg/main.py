#!/usr/bin/env python3
"""
GDA Kernel GAN Dynamics - Command Line Interface

Simulates gradient descent-ascent training of point-mass GANs with an RBF
kernel discriminator and checks the closed-form local convergence theory.

Usage:
    python main.py [--seed INT] [--quiet] COMMAND [OPTIONS]

Commands:
    simulate           Run one simulation engine and export the trajectory CSV
    spectrum           Closed-form spectrum and bounds for every region
    phase-diagram      (sigma, lambda) sweep with CSV and SVG heatmap
    validate-rate      Fitted vs predicted local contraction rate
    stability-bisect   Empirical step-size stability boundary
    verify-theorem     Numerical Jacobian oracle against the closed-form spectrum
    theorem-grid       Oracle over a grid of (N, d) configurations
    check-sufficiency  Random draws of the sufficient stability condition
    check-kernel       Finite-difference check of the kernel derivatives

Exit codes: 0 success, 1 usage/config error, 2 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

# Add project root to path for imports
sys.path.append(str(Path(__file__).parent))

from config.loader import config, get_default_seed
from core.dynamics import TrajectoryStatus, export_trajectory_csv, simulate
from core.exceptions import (
    EigenSolverError,
    GdaKernelError,
    LinearizationError,
    NonPositiveCoefficientError,
    ScenarioError,
    SimulationDivergedError,
)
from core.jacobian_oracle import report_to_dict as theorem_to_dict
from core.jacobian_oracle import verify_theorem
from core.scenario import load_scenario
from pipeline.experiments import (
    ExperimentStatus,
    SweepGrid,
    analyze_scenario,
    log_axis,
    run_kernel_check,
    run_phase_diagram,
    run_rate_validation,
    run_stability_bisection,
    run_sufficiency_check,
    run_theorem_grid,
)
from tools.reports import dumps_report, write_report
from utils.logging import get_cli_logger, set_global_level

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

logger = get_cli_logger()


def parse_range(text: str) -> Tuple[float, float, int]:
    """LO:HI:N -> (lo, hi, n)."""
    try:
        lo, hi, n = text.split(':')
        return float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI:N, got {text!r}") from None


def _emit(data, out: Optional[str]):
    if out:
        write_report(data, out)
        print(f"[REPORT] Written to {out}")
    else:
        sys.stdout.write(dumps_report(data))


def simulate_cmd(args) -> int:
    s = load_scenario(args.scenario)
    record = simulate(s, args.steps, args.mode, record_every=args.record_every)
    export_trajectory_csv(record, args.out)
    final = record.steps[-1]
    print(f"[SIMULATE] mode={args.mode} steps={final.t} status={record.status.value}")
    print(f"[SIMULATE] final max_dist={final.max_dist:.6e} loss={final.loss:.6e}")
    print(f"[OUTPUT] {args.out}")
    if record.status == TrajectoryStatus.DIVERGED:
        print(f"[ERROR] Simulation diverged at step {record.diverged_at}")
        return EXIT_NUMERICAL
    return EXIT_OK


def spectrum_cmd(args) -> int:
    s = load_scenario(args.scenario)
    _emit(analyze_scenario(s), args.out)
    return EXIT_OK


def phase_diagram_cmd(args) -> int:
    s = load_scenario(args.scenario)
    defaults = config.get_experiment_defaults('phase_diagram')
    sigma = args.sigma or tuple(defaults.get('sigma', [1e-2, 1e1, 100]))
    lam = args.lam or tuple(defaults.get('lambda', [1e-2, 1e1, 100]))
    grid = SweepGrid(sigma_axis=log_axis(*sigma), lambda_axis=log_axis(*lam), fixed=s)
    result = run_phase_diagram(grid, args.out_prefix)
    counts = {}
    for cell in result.cells:
        counts[cell.phase.value] = counts.get(cell.phase.value, 0) + 1
    print(f"[PHASE] {len(result.cells)} cells, status={result.status.value}")
    for phase, count in sorted(counts.items()):
        print(f"[PHASE] {phase}: {count}")
    print(f"[OUTPUT] {result.csv_path}")
    print(f"[OUTPUT] {result.svg_path}")
    return EXIT_OK


def validate_rate_cmd(args) -> int:
    s = load_scenario(args.scenario)
    report = run_rate_validation(s, offset=args.offset, T=args.steps, init=args.init, seed=args.seed)
    _emit(report, args.out)
    if report.r_fit is not None:
        print(f"[RATE] r_fit={report.r_fit:.7f} rho_max={report.rho_max_theory:.7f} "
              f"rho_generator={report.rho_generator:.7f}")
    return EXIT_OK


def stability_bisect_cmd(args) -> int:
    s = load_scenario(args.scenario)
    report = run_stability_bisection(s, target=args.target, steps=args.steps, seed=args.seed)
    _emit(report, args.out)
    if report.status == ExperimentStatus.ERROR:
        return EXIT_NUMERICAL
    print(f"[BISECT] empirical={report.empirical:.6g} theory={report.theory_bound:.6g} "
          f"({report.target}) rel_gap={report.rel_gap:.3%}")
    return EXIT_OK


def verify_theorem_cmd(args) -> int:
    s = load_scenario(args.scenario)
    check = verify_theorem(s, D=args.features, seed=args.seed, sampler=args.sampler)
    _emit(theorem_to_dict(check), args.out)
    print(f"[ORACLE] max_rel_err={check.max_rel_err:.3e} ambient={check.ambient_count}/{check.expected_ambient}")
    return EXIT_OK if check.passed(args.tolerance) else EXIT_NUMERICAL


def theorem_grid_cmd(args) -> int:
    rows = run_theorem_grid(n_gens=args.n_gens, dims=args.dims, D=args.features,
                            seeds=(args.seed,), sampler=args.sampler)
    _emit(rows, args.out)
    worst = max((r.max_rel_err for r in rows if r.max_rel_err is not None), default=float('nan'))
    failed = [r for r in rows if r.status != ExperimentStatus.COMPLETED
              or r.max_rel_err is None or r.max_rel_err > args.tolerance]
    print(f"[ORACLE] {len(rows)} configurations, worst max_rel_err={worst:.3e}, {len(failed)} failed")
    return EXIT_OK if not failed else EXIT_NUMERICAL


def check_sufficiency_cmd(args) -> int:
    report = run_sufficiency_check(args.draws, seed=args.seed)
    _emit(report, args.out)
    print(f"[SUFFICIENCY] {report.sufficient}/{report.draws} sufficient, "
          f"{len(report.counterexamples)} counterexamples")
    return EXIT_OK if report.holds else EXIT_NUMERICAL


def check_kernel_cmd(args) -> int:
    from core.kernel import KernelSpec

    k = KernelSpec(width=args.width, dimension=args.dimension)
    report = run_kernel_check(k, n_points=args.points, seed=args.seed, h=args.step)
    _emit(report, args.out)
    print(f"[KERNEL] grad={report.max_grad_dev:.2e} hess={report.max_hess_dev:.2e} "
          f"cross={report.max_cross_dev:.2e} tolerance={report.tolerance:.2e}")
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--seed', type=int, default=get_default_seed(), help='Seed for every random choice')
    parser.add_argument('--quiet', action='store_true', help='Only log warnings and errors')
    subparsers = parser.add_subparsers(dest='command', required=True, help='Command to run')

    p = subparsers.add_parser('simulate', help='Run a simulation engine')
    p.add_argument('--scenario', required=True, help='Scenario YAML file')
    p.add_argument('--steps', type=int, required=True, help='Number of GDA steps')
    p.add_argument('--mode', choices=['explicit', 'eliminated', 'local'], default='explicit')
    p.add_argument('--record-every', type=int, default=1, help='Recording stride')
    p.add_argument('--out', required=True, help='Trajectory CSV path')
    p.set_defaults(handler=simulate_cmd)

    p = subparsers.add_parser('spectrum', help='Closed-form spectrum report')
    p.add_argument('--scenario', required=True)
    p.add_argument('--out', help='JSON report path (stdout when omitted)')
    p.set_defaults(handler=spectrum_cmd)

    p = subparsers.add_parser('phase-diagram', help='(sigma, lambda) phase diagram')
    p.add_argument('--scenario', required=True)
    p.add_argument('--sigma', type=parse_range, help='LO:HI:N log-spaced sigma axis')
    p.add_argument('--lambda', dest='lam', type=parse_range, help='LO:HI:N log-spaced lambda axis')
    p.add_argument('--out-prefix', required=True, help='Writes PREFIX.csv and PREFIX.svg')
    p.set_defaults(handler=phase_diagram_cmd)

    p = subparsers.add_parser('validate-rate', help='Fitted vs predicted contraction rate')
    p.add_argument('--scenario', required=True)
    p.add_argument('--offset', type=float, help='Initial offset in units of sigma')
    p.add_argument('--steps', type=int, help='Number of GDA steps')
    p.add_argument('--init', choices=['auto', 'zero', 'optimal'], default='auto',
                   help='Initial discriminator (auto: optimal when the a mode dominates)')
    p.add_argument('--out', help='JSON report path')
    p.set_defaults(handler=validate_rate_cmd)

    p = subparsers.add_parser('stability-bisect', help='Empirical stability boundary in eta_d')
    p.add_argument('--scenario', required=True)
    p.add_argument('--target', choices=['2/a', '2/b', '(a+b)/c'], help='Bound to compare with')
    p.add_argument('--steps', type=int, help='Simulation horizon per trial')
    p.add_argument('--out', help='JSON report path')
    p.set_defaults(handler=stability_bisect_cmd)

    p = subparsers.add_parser('verify-theorem', help='Numerical Jacobian oracle')
    p.add_argument('--scenario', required=True)
    p.add_argument('--features', type=int, help='Feature dimension D')
    p.add_argument('--sampler', choices=['mc', 'qmc'])
    p.add_argument('--tolerance', type=float, default=2e-2, help='Max relative mismatch')
    p.add_argument('--out', help='JSON report path')
    p.set_defaults(handler=verify_theorem_cmd)

    p = subparsers.add_parser('theorem-grid', help='Jacobian oracle over (N, d) configurations')
    p.add_argument('--n-gens', type=int, nargs='+', help='Generated point counts N')
    p.add_argument('--dims', type=int, nargs='+', help='Dimensions d')
    p.add_argument('--features', type=int, help='Feature dimension D')
    p.add_argument('--sampler', choices=['mc', 'qmc'])
    p.add_argument('--tolerance', type=float, default=2e-2, help='Max relative mismatch')
    p.add_argument('--out', help='JSON report path')
    p.set_defaults(handler=theorem_grid_cmd)

    p = subparsers.add_parser('check-sufficiency', help='Sufficient stability condition draws')
    p.add_argument('--draws', type=int)
    p.add_argument('--out', help='JSON report path')
    p.set_defaults(handler=check_sufficiency_cmd)

    p = subparsers.add_parser('check-kernel', help='Kernel derivative finite-difference check')
    p.add_argument('--width', type=float, default=1.0)
    p.add_argument('--dimension', type=int, default=2)
    p.add_argument('--points', type=int, default=20)
    p.add_argument('--step', type=float, help='Finite-difference step h')
    p.add_argument('--out', help='JSON report path')
    p.set_defaults(handler=check_kernel_cmd)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    if args.quiet:
        set_global_level(logging.WARNING)

    missing = [k for k, ok in config.validate_configuration().items() if not ok]
    if missing:
        logger.warning("Missing configuration sections", sections=",".join(missing))

    try:
        return args.handler(args)
    except (ScenarioError, FileNotFoundError, LinearizationError,
            NonPositiveCoefficientError, ValueError) as e:
        logger.log_error_with_context(e, operation=args.command)
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SimulationDivergedError, EigenSolverError, GdaKernelError) as e:
        logger.log_error_with_context(e, operation=args.command)
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
