#!/usr/bin/env python3
"""
Superlab - Command Line Front Door

Numerical checks of Itô calculus for superprocesses on the circle:
martingale problem, state and functional Itô formulas, martingale
representation, dyadic approximation, and Feller/Laplace oracles.

Exit status: 0 when every acceptance flag passes, 1 when a flag fails or the
run breaks, 2 on configuration errors.
"""

import argparse
import os
import signal
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import ui
from config import VERSION, build_config, load_config_file
from errors import ConfigError, SuperlabError
from experiments import run_experiment, simulate_dump
from reports import check_manifest

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

VERIFY_KINDS = ["mp", "ito-state", "ito-functional", "representation", "dyadic-convergence"]

EPILOG = """
Examples:
    superlab verify mp --n 2000 --dt 0.001953125 --c 1 --T 1 --replicates 200 --seed 42
    superlab verify representation --phi const:2 --T 1
    superlab verify dyadic-convergence --levels 2,4,6,8
    superlab verify ito-state --functional exp --phi cos:1 --dt-levels 0.001953125,0.00048828125
    superlab oracle laplace --phi const:2
    superlab oracle feller --feller-paths 20000
    superlab simulate --replicates 4 --output runs
    superlab check-manifest runs/mp

Field specs are sums of const:v, cos:k[:amp], sin:k[:amp] and coeffs:a0:a1..:b1..
The default output directory comes from $SUPERLAB_OUTPUT_DIR (else ./runs).
"""


def _signal_handler(signum, frame):
    ui.print_error("Interrupted, partial outputs are kept")
    sys.exit(EXIT_FAILED)


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v]


def _strings(text: str) -> List[str]:
    return [v for v in text.split(",") if v]


def _add_run_options(parser: argparse.ArgumentParser):
    sim = parser.add_argument_group("simulation")
    sim.add_argument("--n", dest="n_particles", type=int, help="initial particle count N")
    sim.add_argument("--dt", type=float, help="time step")
    sim.add_argument("--c", type=float, help="branching rate c")
    sim.add_argument("--T", type=float, help="time horizon")
    sim.add_argument("--m", dest="initial_mass", type=float, help="initial total mass")
    sim.add_argument("--seed", type=int, help="64-bit seed")
    sim.add_argument("--max-particles", type=int, help="particle cap per replicate")

    run = parser.add_argument_group("run")
    run.add_argument("--config", help="JSON or YAML config file; flags override it")
    run.add_argument("--replicates", type=int, help="number of replicates R")
    run.add_argument("--workers", type=int, help="worker processes (1 = in-process)")
    run.add_argument("--output", dest="output_dir", help="output directory")
    run.add_argument("--phi", help="test function spec, e.g. const:2 or cos:1")
    run.add_argument("--psi", help="running-integral test function spec")
    run.add_argument("--fields", type=_strings, help="comma-separated test functions for verify mp")
    run.add_argument("--functional", help="functional family")
    run.add_argument("--levels", type=_ints, help="dyadic levels, e.g. 2,4,6,8")
    run.add_argument("--dt-levels", type=_floats, help="refinement time steps, e.g. 0.001953125,0.00048828125")
    run.add_argument("--t", type=float, help="evaluation time (default T)")
    run.add_argument("--solver-steps", type=int, help="log-Laplace solver steps")
    run.add_argument("--solver-modes", type=int, help="log-Laplace solver Fourier modes")
    run.add_argument("--projection-modes", type=int, help="modes for projecting numeric derivatives")
    run.add_argument("--feller-paths", type=int, help="paths for the 1-D Feller oracle")
    run.add_argument("--quiet", action="store_true", help="only print errors")


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="superlab",
        description=f"Superlab v{VERSION} - Itô calculus for superprocesses, checked by Monte Carlo",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )
    parser.add_argument("--version", action="version", version=f"superlab {VERSION}")
    commands = parser.add_subparsers(dest="command")

    simulate = commands.add_parser("simulate", help="simulate replicates and dump the paths as CSV")
    _add_run_options(simulate)

    verify = commands.add_parser("verify", help="run a verification experiment")
    verify.add_argument("kind", choices=VERIFY_KINDS)
    verify.add_argument("--check-manifest", action="store_true", help="re-hash the outputs after the run")
    _add_run_options(verify)

    oracle = commands.add_parser("oracle", help="closed-form oracles")
    oracle.add_argument("kind", choices=["laplace", "feller"])
    _add_run_options(oracle)

    manifest = commands.add_parser("check-manifest", help="verify the SHA-256 manifest of a run directory")
    manifest.add_argument("directory")
    return parser


SIM_KEYS = ("n_particles", "dt", "c", "T", "initial_mass", "seed", "max_particles")
RUN_KEYS = (
    "replicates", "workers", "output_dir", "phi", "psi", "fields", "functional", "levels",
    "dt_levels", "t", "solver_steps", "solver_modes", "projection_modes", "feller_paths",
)


def overrides_from_args(args: argparse.Namespace, kind: str) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {"kind": kind}
    for key in RUN_KEYS:
        overrides[key] = getattr(args, key, None)
    overrides["sim"] = {key: getattr(args, key, None) for key in SIM_KEYS}
    return overrides


def interactive_setup() -> Optional[List[str]]:
    """Ask for an experiment and its core parameters; returns equivalent argv."""
    ui.print_banner(VERSION)
    ui.console.print("[bold]Welcome to Superlab![/] Let's set up a verification run.\n")

    choice = ui.ask_select(
        "Select experiment:",
        choices=[
            "mp - martingale problem and Feller moments",
            "ito-state - state Itô formula residuals",
            "ito-functional - functional Itô formula residuals",
            "representation - martingale representation residuals",
            "dyadic-convergence - piecewise-constant path approximation",
            "laplace - Laplace functional oracle",
            "feller - 1-D Feller diffusion oracle",
        ],
    )
    if not choice:
        return None
    kind = choice.split(" ", 1)[0]

    argv = ["oracle", kind] if kind in ("laplace", "feller") else ["verify", kind]
    argv += ["--n", ui.ask_text("Particles N:", "2000")]
    argv += ["--replicates", ui.ask_text("Replicates R:", "200")]
    argv += ["--seed", ui.ask_text("Seed:", "42")]
    if kind in ("ito-state", "ito-functional"):
        family = ui.ask_select(
            "Functional family:",
            choices=["exp", "linear", "square", "exp-martingale"]
            + (["path-product", "running-integral"] if kind == "ito-functional" else []),
        )
        argv += ["--functional", family or "exp"]
    if kind in ("ito-state", "ito-functional", "representation", "laplace"):
        argv += ["--phi", ui.ask_text("Test function phi:", "const:2")]
    if ui.ask_confirm("Use all CPU cores?", default=False):
        argv += ["--workers", str(os.cpu_count() or 1)]
    return argv


def _check_manifest(directory: Path) -> int:
    problems = check_manifest(directory)
    if problems:
        for problem in problems:
            ui.print_error(problem)
        return EXIT_FAILED
    ui.print_success(f"manifest OK: {directory}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    signal.signal(signal.SIGINT, _signal_handler)
    signal.signal(signal.SIGTERM, _signal_handler)

    argv = sys.argv[1:] if argv is None else argv
    parser = create_parser()
    if not argv:
        if not sys.stdin.isatty():
            parser.print_help()
            return EXIT_CONFIG
        argv = interactive_setup()
        if not argv:
            parser.print_help()
            return EXIT_CONFIG

    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    if args.command == "check-manifest":
        return _check_manifest(Path(args.directory))

    ui.set_quiet(args.quiet)
    kind = {
        "simulate": "mp",
        "verify": getattr(args, "kind", None),
        "oracle": "laplace-oracle" if getattr(args, "kind", None) == "laplace" else "feller-oracle",
    }[args.command]

    try:
        data = load_config_file(args.config) if args.config else {}
        config = build_config(data, overrides_from_args(args, kind))
    except ValueError as e:
        ui.print_error(f"Configuration error: {e}")
        ui.print_info("Tip: run 'superlab --help' for the accepted flags and field specs")
        return EXIT_CONFIG

    ui.print_banner(VERSION)
    try:
        if args.command == "simulate":
            simulate_dump(config)
            return EXIT_OK
        result = run_experiment(config)
        if kind == "laplace-oracle":
            ui.print_info(f"E exp(-<X_T, phi>) ≈ {result.summary['laplace_mean']:.6f}")
    except ConfigError as e:
        ui.print_error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (SuperlabError, ValueError) as e:
        ui.print_error(f"Run failed: {e}")
        return EXIT_FAILED

    status = EXIT_OK if result.passed else EXIT_FAILED
    if getattr(args, "check_manifest", False) and _check_manifest(result.output_dir) != EXIT_OK:
        status = EXIT_FAILED
    return status


if __name__ == "__main__":
    sys.exit(main())
