"""
Command-line entry point: ``bbvi sweep|scaling|variance|nonconvex|run``.
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .config import EXPERIMENT_KINDS, Config, load_config
from .errors import ConfigurationError
from .experiments import ExperimentRunner
from .results import write_results

EXIT_OK = 0
EXIT_IO_ERROR = 1
EXIT_CONFIG_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bbvi",
        description="Black-box variational inference experiments with structured scale families.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    help_text = {
        "sweep": "iterations to eps over a stepsize grid",
        "scaling": "best-stepsize iterations to eps as the number of datapoints grows",
        "variance": "measured gradient variance against the analytic bound",
        "nonconvex": "curvature of the non-standardized energy on a grid",
        "run": "single traced runs at a fixed stepsize",
    }
    for kind in EXPERIMENT_KINDS:
        sub = subparsers.add_parser(kind, help=help_text[kind])
        sub.add_argument("--config", type=Path, default=None, help="Experiment configuration file.")
        sub.add_argument("--family", dest="families", type=str, default=None,
                         help="Comma-separated families (mean_field, full_rank, structured).")
        sub.add_argument("--n", dest="n_values", type=str, default=None,
                         help="Comma-separated numbers of datapoints, e.g. 100,200,300.")
        sub.add_argument("--eps", type=str, default=None, help="Accuracy threshold on the squared distance.")
        sub.add_argument("--m", dest="samples", type=str, default=None, help="Monte Carlo samples per gradient.")
        sub.add_argument("--tmax", type=str, default=None, help="Maximum number of iterations.")
        sub.add_argument("--reps", type=str, default=None, help="Replications per sweep cell.")
        sub.add_argument("--seed", type=str, default=None, help="Base random seed.")
        sub.add_argument("--out", type=Path, default=None, help="Output directory for CSV files.")
        sub.add_argument("--workers", type=str, default=None, help="Worker processes for sweep cells.")
        sub.add_argument("--stepsize", type=str, default=None, help="Stepsize of the 'run' experiment.")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Map parsed flags onto dotted configuration keys (unset flags map to None)."""
    return {
        "experiment": args.command,
        "families": args.families,
        "target.n": args.n_values,
        "eps": args.eps,
        "samples": args.samples,
        "tmax": args.tmax,
        "reps": args.reps,
        "seed": args.seed,
        "output": None if args.out is None else str(args.out),
        "workers": args.workers,
        "stepsize.value": args.stepsize,
    }


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for running an experiment."""
    args = build_parser().parse_args(argv)

    try:
        runtime = Config()
        config = load_config(args.config, overrides_from_args(args), runtime=runtime)
    except ConfigurationError as e:
        print(f"ERROR: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    try:
        results = ExperimentRunner(config, runtime).run()
        paths = write_results(results, config.output_dir)
    except OSError as e:
        print(f"\nERROR: {e}", file=sys.stderr)
        return EXIT_IO_ERROR
    except Exception as e:
        print(f"\nERROR: Experiment failed: {str(e)}", file=sys.stderr)
        return EXIT_IO_ERROR

    print("\n" + "=" * 80)
    print(f"EXPERIMENT '{config.kind}' COMPLETED SUCCESSFULLY")
    print("=" * 80)
    for path in paths:
        print(f"  - {path}")
    print("=" * 80)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
