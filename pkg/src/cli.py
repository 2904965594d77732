#!/usr/bin/env python3
"""
Command-line surface of the SBR settling simulator.

Usage:
    sbr-settling run --scenario example1 --cells 100 --out results/
    sbr-settling convergence --scenario example2 --cells 25,50,100,200
    sbr-settling tolerance --scenario example2 --cells 100
    sbr-settling benchmark --scenario example2 --cells 100,200,400
    sbr-settling validate --scenario data/scenarios/example1.cfg
    sbr-settling stationarity --scenario example3 --cells 100,200,400

``--scenario`` takes a scenario file or the name of a bundled example.
Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 validation failure.
"""

import argparse
import logging
import re
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .config import ScenarioConfig, create_example_scenario, write_run_outputs
from .discretization import FluxChoice, Scheme
from .errors import ConfigurationError, SettlingError
from .properties import raise_on_violation, reports_frame, run_property_suites
from .scenario import SECONDS_PER_HOUR
from .simulator import Simulator
from .validation import DEFAULT_EPSILONS, DEFAULT_N_REF, ProfileSet, ValidationStudy

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
BUNDLED_DIR = Path(__file__).resolve().parent.parent / "data" / "scenarios"
MONOTONE_CELLS = 8


def load_scenario(reference: str) -> ScenarioConfig:
    """A scenario file path, a bundled file name or ``exampleN``."""
    path = Path(reference)
    if path.exists():
        return ScenarioConfig.from_file(path)
    bundled = BUNDLED_DIR / f"{reference}.cfg"
    if bundled.exists():
        return ScenarioConfig.from_file(bundled)
    match = re.fullmatch(r"example([123])", reference.strip().lower())
    if match:
        return create_example_scenario(int(match.group(1)))
    raise ConfigurationError(f"scenario not found: {reference}")


def parse_int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"expected a comma-separated list of integers, got '{text}'") from exc
    if not values or any(v < 4 for v in values):
        raise ConfigurationError(f"cell counts must be integers >= 4, got '{text}'")
    return values


def parse_float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"expected a comma-separated list of numbers, got '{text}'") from exc


def _numerics(args, cells: Optional[int] = None) -> dict:
    return {
        "cells": cells,
        "scheme": Scheme.parse(args.scheme) if getattr(args, "scheme", None) else None,
        "flux": FluxChoice.parse(args.flux) if args.flux else None,
        "tolerance": args.tolerance,
        "cfl_safety": args.cfl_safety,
        "snapshot_s": args.snapshot_s,
    }


def _eval_times(args, config: ScenarioConfig) -> List[float]:
    if args.times:
        return [t * SECONDS_PER_HOUR for t in parse_float_list(args.times)]
    return [config.stages[-1].t_end_h * SECONDS_PER_HOUR]


def _reference(args, config: ScenarioConfig):
    if not args.reference:
        return None
    return ProfileSet.from_csv(args.reference, config.constitutive.c_conv)


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def cmd_run(args) -> int:
    config = load_scenario(args.scenario).with_numerics(**_numerics(args, args.cells))
    scenario = config.build()
    simulator = Simulator(scenario, config.settings(), verbose=not args.quiet)
    eval_times = [t * SECONDS_PER_HOUR for t in parse_float_list(args.times)] if args.times else ()
    output = simulator.run(eval_times)
    paths = write_run_outputs(output, args.out)
    if not args.quiet:
        for key, path in paths.items():
            print(f"  {key:<15} {path}")
    return 0


def _study(args, config: ScenarioConfig) -> ValidationStudy:
    config = config.with_numerics(**_numerics(args))
    return ValidationStudy(config.build(), config.settings(), out_dir=args.out, verbose=not args.quiet)


def cmd_convergence(args) -> int:
    config = load_scenario(args.scenario)
    schemes = [Scheme.parse(s) for s in args.schemes.split(",")]
    _study(args, config).convergence(
        parse_int_list(args.cells),
        schemes=schemes,
        eval_times=_eval_times(args, config),
        reference=_reference(args, config),
        N_ref=args.n_ref,
    )
    return 0


def cmd_tolerance(args) -> int:
    config = load_scenario(args.scenario)
    epsilons = parse_float_list(args.epsilons) if args.epsilons else DEFAULT_EPSILONS
    _study(args, config).tolerance(
        args.cells,
        epsilons=epsilons,
        eval_times=_eval_times(args, config),
        reference=_reference(args, config),
        N_ref=args.n_ref,
    )
    return 0


def cmd_benchmark(args) -> int:
    config = load_scenario(args.scenario)
    _study(args, config).benchmark(parse_int_list(args.cells), eval_times=_eval_times(args, config))
    return 0


def cmd_stationarity(args) -> int:
    config = load_scenario(args.scenario)
    _study(args, config).stationarity(
        parse_int_list(args.cells),
        t_early=args.t_early * SECONDS_PER_HOUR,
        t_late=args.t_late * SECONDS_PER_HOUR,
    )
    return 0


def cmd_validate(args) -> int:
    config = load_scenario(args.scenario).with_numerics(**_numerics(args, args.cells))
    scenario = config.build()
    settings = config.settings()
    simulator = Simulator(scenario, settings)
    monotone = Simulator(scenario, settings.with_updates(cells=MONOTONE_CELLS))

    def progress(title: str) -> None:
        if not args.quiet:
            print(f"Running {title} suite...")

    reports = run_property_suites(
        simulator,
        monotone_simulator=monotone,
        omega_trials=args.omega_trials,
        monotone_trials=args.monotone_trials,
        matrix_trials=args.matrix_trials,
        seed=args.seed,
        progress=progress,
    )
    frame = reports_frame(reports)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_dir / f"{config.name}_properties.csv", index=False, float_format="%.10g")
    if not args.quiet:
        print("=" * 80)
        print(f" PROPERTY SUITES: {config.name}")
        print("=" * 80)
        print(frame.to_string(index=False))
    raise_on_violation(reports)
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------


def _common(parser: argparse.ArgumentParser, batch: bool) -> None:
    parser.add_argument("--scenario", required=True, help="Scenario file or bundled example name")
    parser.add_argument("--flux", choices=[f.value for f in FluxChoice], help="Numerical flux")
    parser.add_argument("--tolerance", type=float, help="Newton tolerance epsilon")
    parser.add_argument("--cfl-safety", type=float, help="CFL safety factor")
    parser.add_argument("--snapshot-s", type=float, help="Snapshot cadence in seconds")
    parser.add_argument("--out", default="reports", help="Output directory")
    parser.add_argument("--quiet", action="store_true", help="Suppress progress output")
    if not batch:
        parser.add_argument("--scheme", choices=[s.value for s in Scheme], help="Time-stepping scheme")
    else:
        parser.add_argument("--times", help="Evaluation times in hours, comma separated")
        parser.add_argument("--reference", help="Reference profile CSV")
        parser.add_argument("--n-ref", type=int, default=DEFAULT_N_REF, help="Cells of the computed reference")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbr-settling", description="Reactive settling in a sequencing batch reactor"
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Simulate one scenario and write profile and outlet CSVs")
    _common(run, batch=False)
    run.add_argument("--cells", type=int, help="Number of cells N")
    run.add_argument("--times", help="Extra snapshot times in hours, comma separated")
    run.set_defaults(handler=cmd_run)

    convergence = commands.add_parser("convergence", help="Errors and EOC against a reference")
    _common(convergence, batch=True)
    convergence.add_argument("--cells", default="25,50,100,200", help="Cell counts, comma separated")
    convergence.add_argument("--schemes", default="explicit,semi-implicit", help="Schemes, comma separated")
    convergence.set_defaults(handler=cmd_convergence)

    tolerance = commands.add_parser("tolerance", help="Newton tolerance sweep")
    _common(tolerance, batch=True)
    tolerance.add_argument("--cells", type=int, default=100, help="Number of cells N")
    tolerance.add_argument("--epsilons", help="Tolerances, comma separated")
    tolerance.set_defaults(handler=cmd_tolerance)

    benchmark = commands.add_parser("benchmark", help="Wall clock of both schemes")
    _common(benchmark, batch=True)
    benchmark.add_argument("--cells", default="100,200,400", help="Cell counts, comma separated")
    benchmark.set_defaults(handler=cmd_benchmark)

    stationarity = commands.add_parser("stationarity", help="Sediment drift between two times")
    _common(stationarity, batch=True)
    stationarity.add_argument("--cells", default="100,200,400", help="Cell counts, comma separated")
    stationarity.add_argument("--t-early", type=float, default=25.0, help="Early time in hours")
    stationarity.add_argument("--t-late", type=float, default=70.0, help="Late time in hours")
    stationarity.set_defaults(handler=cmd_stationarity)

    validate = commands.add_parser("validate", help="Invariant-region, monotonicity and M-matrix suites")
    _common(validate, batch=False)
    validate.add_argument("--cells", type=int, help="Number of cells N")
    validate.add_argument("--omega-trials", type=int, default=10_000)
    validate.add_argument("--monotone-trials", type=int, default=1000)
    validate.add_argument("--matrix-trials", type=int, default=1000)
    validate.add_argument("--seed", type=int, default=0)
    validate.set_defaults(handler=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        return args.handler(args)
    except SettlingError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"Error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
