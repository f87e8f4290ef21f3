"""
Command-line front end: list the catalog, verify, simulate and tabulate curvature.

Exit codes: 0 when every requested check passes, 1 when a check fails or a
trajectory is truncated, 2 for configuration errors and unknown systems.
"""
import argparse
from typing import Any, Dict, List, Optional

import structlog

from .catalog import list_systems
from .config import settings
from .errors import ConfigError
from .logging_setup import configure_logging
from .models import CheckStatus, RunConfig
from .pipeline import AuditPipeline, load_run_config
from .verify import pair_table

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

# errors raised while stepping count as a failed run, not a bad config
RUNTIME_ERRORS = {"DomainError", "NoConvergence"}

COMMANDS = ("list", "verify", "simulate", "curvature")


def _parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="poisson_coalgebra",
        description="Build and audit superintegrable Hamiltonian systems with coalgebra symmetry.",
    )
    parser.add_argument("command", choices=COMMANDS, help="Action to run.")
    parser.add_argument("--config", type=str, default=None, help="JSON run configuration.")
    parser.add_argument("--system", type=str, default=None, help="Catalog id, e.g. sl2.evans.")
    parser.add_argument("--n", type=int, default=None, help="Number of sites N.")
    parser.add_argument("--seed", type=int, default=None, help=f"Sampling seed (default: {settings.seed}).")
    parser.add_argument("--samples", type=int, default=None, help=f"Sample points (default: {settings.samples}).")
    parser.add_argument("--tol", type=float, default=None, help=f"Bracket tolerance (default: {settings.tolerance:g}).")
    parser.add_argument("--jobs", type=int, default=None, help=f"Worker threads (default: {settings.jobs}).")
    parser.add_argument("--out", type=str, default=None, help=f"Output directory (default: {settings.output_dir}).")
    return parser.parse_args(argv)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    flags = {"system": args.system, "n": args.n, "seed": args.seed, "samples": args.samples,
             "tolerance": args.tol, "jobs": args.jobs}
    return {key: value for key, value in flags.items() if value is not None}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Run configuration from --config with flags on top, or from flags alone."""
    overrides = _overrides(args)
    if args.config is not None:
        return load_run_config(args.config, overrides)
    if "system" not in overrides:
        raise ConfigError("either --config or --system is required")
    try:
        return RunConfig(**overrides)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def cmd_list() -> int:
    systems = list_systems()
    width = max(len(info.id) for info in systems)
    ref_width = max(len(info.reference) for info in systems)
    for info in systems:
        print(f"{info.id:<{width}}  {info.claimed_class.value:<16}  {info.reference:<{ref_width}}  {info.description}")
    return EXIT_OK


def _exit_code(result: Dict[str, Any], command: str) -> int:
    if result["error"] is not None:
        print(f"error: {result['error']}")
        if command == "simulate" and result["error_type"] in RUNTIME_ERRORS:
            return EXIT_FAILED
        return EXIT_CONFIG
    return EXIT_OK if result["success"] else EXIT_FAILED


def cmd_verify(pipeline: AuditPipeline) -> int:
    result = pipeline.run_verify()
    if result["error"] is None:
        report = result["report"]
        print(f"{report.system_id} N={report.n}: claimed {report.claimed_class.value}, "
              f"verified {report.verified_class.value}")
        if report.involution is not None and not report.involution.passed:
            for first, second, residual, status in pair_table(report.involution):
                if status == CheckStatus.FAILED.value:
                    print(f"  {{{first}, {second}}} = {residual:.3e}  {status}")
        for limit in report.limits:
            print(f"  limit {limit.parameter} -> 0: order {limit.order}, {'passed' if limit.passed else 'failed'}")
        print(f"report written to {result['path']}")
    return _exit_code(result, "verify")


def cmd_simulate(pipeline: AuditPipeline) -> int:
    result = pipeline.run_simulate()
    if result["error"] is None:
        summary = result["summary"]
        print(f"{summary.system_id} N={summary.n}: {summary.steps_taken}/{summary.requested_steps} steps")
        for label, value in sorted(summary.drift.items()):
            print(f"  drift {label}: {value:.3e}")
        if summary.truncated:
            print(f"  truncated at t={summary.truncation_time:g}: {summary.truncation_reason}")
        print(f"trajectory written to {result['path']}")
    return _exit_code(result, "simulate")


def cmd_curvature(pipeline: AuditPipeline) -> int:
    result = pipeline.run_curvature()
    if result["error"] is None:
        differences = [row.difference for row in result["rows"] if row.difference is not None]
        if differences:
            print(f"max |closed - numeric| = {max(differences):.3e} over {len(result['rows'])} points")
        print(f"curvature table written to {result['path']}")
    return _exit_code(result, "curvature")


def main(argv: Optional[List[str]] = None) -> int:
    args = _parse_args(argv)
    configure_logging(settings.log_level, settings.log_format)

    if args.command == "list":
        return cmd_list()

    try:
        config = resolve_config(args)
    except ConfigError as e:
        logger.error("Invalid run configuration", error=str(e))
        print(f"error: {e}")
        return EXIT_CONFIG

    pipeline = AuditPipeline(config, args.out)
    if args.command == "verify":
        return cmd_verify(pipeline)
    if args.command == "simulate":
        return cmd_simulate(pipeline)
    return cmd_curvature(pipeline)
