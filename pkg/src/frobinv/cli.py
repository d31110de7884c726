"""
The frobinv command-line interface.

    frobinv verify <scenario.xml>
    frobinv trajectory <scenario.xml> [--q0 Q] [--p0 P] [--t0 T] [--t-end T]
    frobinv scan <scenario.xml>

Global options: --seed, --out, --threads and --verbose. The exit code is 0 when
every check passes, 1 when a check fails and 2 for usage and configuration errors.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional
from xml.etree import ElementTree

from pydantic import ValidationError

import frobinv.datatypes as dt
from frobinv import processing
from frobinv.config import ScenarioFileParser
from frobinv.errors import (
    BudgetError,
    ContractError,
    ConvergenceError,
    DegenerateScanError,
    DomainError,
    FamilyConstructionError,
    StiffnessError,
)
from frobinv.suite import VerificationSuite
from frobinv.updaters import apply_overrides

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
LOG_FILE = "debug.log"

CONFIG_ERRORS = (
    OSError,
    ElementTree.ParseError,
    ValidationError,
    FamilyConstructionError,
    DomainError,
    ContractError,
    ValueError,
)
NUMERICAL_ERRORS = (DegenerateScanError, StiffnessError, BudgetError, ConvergenceError)


def build_parser() -> argparse.ArgumentParser:
    """Creates the argument parser with the verify, trajectory and scan subcommands."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", type=Path, help="the XML scenario file")
    common.add_argument("--seed", type=int, help="overrides the seed of the scenario")
    common.add_argument("--out", type=Path, help="the output directory")
    common.add_argument("--threads", type=int, help="the number of worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress messages")

    parser = argparse.ArgumentParser(
        prog="frobinv",
        description="Verify invariants and compatible vector fields of 1-D time-dependent Hamiltonians.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("verify", parents=[common], help="run every enabled check")
    commands.add_parser("scan", parents=[common], help="scan the basic equation residual")
    trajectory = commands.add_parser(
        "trajectory", parents=[common], help="integrate and dump one trajectory"
    )
    trajectory.add_argument("--q0", type=float)
    trajectory.add_argument("--p0", type=float)
    trajectory.add_argument("--t0", type=float)
    trajectory.add_argument("--t-end", dest="t_end", type=float)
    return parser


def configure_logging(output_dir: Path, verbose: bool = False) -> None:
    """Logs to <output_dir>/debug.log and to the console."""
    output_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s [%(levelname)s] %(message)s",
        datefmt="%d-%b-%y %H:%M:%S",
        handlers=[logging.FileHandler(output_dir / LOG_FILE), logging.StreamHandler()],
        force=True,
    )


def resolve_output_dir(
    args: argparse.Namespace, settings: dt.RunSettings, scenario: Optional[dt.ScenarioConfig] = None
) -> Path:
    """
    Returns the output directory: --out first, then FROBINV_OUTPUT_DIR, then the
    <output> node of the scenario and finally the settings default.
    """
    if args.out is not None:
        return args.out
    if "output_dir" in settings.__fields_set__:
        return settings.output_dir
    if scenario is not None and scenario.output_dir is not None:
        return scenario.output_dir
    return settings.output_dir


def load_scenario(args: argparse.Namespace) -> dt.ScenarioConfig:
    """Reads the scenario file and applies the command-line overrides."""
    scenario = ScenarioFileParser(args.scenario).read_scenario()
    new_values = {
        "seed": args.seed,
        "q0": getattr(args, "q0", None),
        "p0": getattr(args, "p0", None),
        "t0": getattr(args, "t0", None),
        "t_end": getattr(args, "t_end", None),
    }
    return apply_overrides(scenario, new_values)


def run(args: argparse.Namespace, settings: dt.RunSettings) -> int:
    """Runs one subcommand and returns its exit code."""
    try:
        scenario = load_scenario(args)
    except CONFIG_ERRORS as error:
        configure_logging(resolve_output_dir(args, settings), args.verbose)
        logging.error(f"Invalid scenario {args.scenario}: {error}")
        return EXIT_USAGE

    output_dir = resolve_output_dir(args, settings, scenario)
    configure_logging(output_dir, args.verbose)
    threads = args.threads if args.threads is not None else settings.threads
    if threads < 1:
        logging.error(f"--threads must be at least 1 (got {threads}).")
        return EXIT_USAGE

    try:
        suite = VerificationSuite(scenario, output_dir=output_dir, threads=threads)
        result = getattr(suite, args.command)()
    except NUMERICAL_ERRORS as error:
        logging.error(f"The {args.command} run of '{scenario.name}' failed: {error}")
        return EXIT_FAIL
    except CONFIG_ERRORS as error:
        logging.error(f"The {args.command} run of '{scenario.name}' cannot start: {error}")
        return EXIT_USAGE

    sys.stdout.write(processing.format_summary(result))
    return EXIT_PASS if result.passed else EXIT_FAIL


def main(argv: Optional[List[str]] = None) -> int:
    """The entry point of the frobinv console script."""
    args = build_parser().parse_args(argv)
    try:
        settings = dt.RunSettings()
    except ValidationError as error:
        sys.stderr.write(f"Invalid FROBINV_ environment settings: {error}\n")
        return EXIT_USAGE
    return run(args, settings)


if __name__ == "__main__":
    sys.exit(main())
