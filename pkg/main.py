"""Command-line entry point for mar-debias.

Examples:
  # Desk-scale reproduction of the debiasing comparison, checked
  mar-debias simulate --preset fig-debias --workers 4 --check

  # Debiased estimate on user data
  mar-debias estimate --data X.csv,y.csv,a.csv --sigma identity --method empirical-sca-moment --lambda 1
"""

import argparse
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger

from src.config import AppConfig, ExperimentConfig, load_config
from src.debias import DebiasMethod
from src.exceptions import ExperimentAbortedError
from src.harness import AcceptanceCheck, ExperimentRunner, run_experiment, run_lambda_sweep
from src.logger import setup_logging
from src.model_gen import Dataset, LinkFunction
from src.pipeline import EstimationPipeline
from src.presets import Preset, build_preset

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2
EXIT_INTERRUPTED = 130


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mar-debias",
        description="Debiased estimation of a mean outcome missing at random",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__.split("Examples:", 1)[1],
    )
    parser.add_argument(
        "--config",
        type=str,
        default="config.yaml",
        help="Path to configuration file (default: config.yaml)"
    )
    parser.add_argument("--verbose", action="store_true", help="Show solver progress")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Run a Monte Carlo experiment")
    simulate.add_argument("--preset", choices=[p.value for p in Preset], help="Named experiment")
    simulate.add_argument("--replicates", type=int, help="Replicates per grid point")
    simulate.add_argument("--seed", type=int, help="64-bit experiment seed")
    simulate.add_argument("--out", type=Path, help="CSV path (default: <output_folder>/<name>.csv)")
    simulate.add_argument("--workers", type=int, help="Worker processes")
    simulate.add_argument("--full-scale", action="store_true", help="1000 replicates per grid point")
    simulate.add_argument("--check", action="store_true", help="Exit 2 when acceptance thresholds fail")

    estimate = commands.add_parser("estimate", help="Debiased estimate on user data")
    estimate.add_argument("--data", required=True, help="X.csv,y.csv,a.csv (no header)")
    estimate.add_argument("--sigma", default="identity", help="'identity' or covariance CSV (no header)")
    estimate.add_argument(
        "--method",
        default=DebiasMethod.EMPIRICAL_SCA_MOMENT.value,
        choices=["ridge", "naive", "empirical-sca-moment", "empirical-sca-mest"],
        help="Estimator (oracle methods need the generative model and are not offered)",
    )
    estimate.add_argument("--lambda", dest="lam", type=float, required=True, help="Ridge parameter")
    estimate.add_argument("--link-floor", type=float, default=0.1, help="Offset-logistic floor c0")
    estimate.add_argument("--out", type=Path, help="CSV with per-coordinate estimates")
    return parser


def resolve_experiment(args: argparse.Namespace, app: AppConfig) -> ExperimentConfig:
    """Preset (or config-file experiment) with command-line overrides applied."""
    full_scale = args.full_scale or app.full_scale
    if args.preset is not None:
        experiment = build_preset(args.preset, full_scale)
    elif app.experiment is not None:
        experiment = app.experiment
    else:
        raise ValueError("No experiment given: pass --preset or add an 'experiment' section to the config")
    updates = {}
    if args.replicates is not None:
        updates["replicates"] = args.replicates
    if args.seed is not None:
        updates["seed"] = args.seed
    return ExperimentConfig.model_validate({**experiment.model_dump(), **updates})


def simulate(args: argparse.Namespace, app: AppConfig) -> int:
    experiment = resolve_experiment(args, app)
    workers = args.workers or app.workers
    run = run_lambda_sweep if experiment.preset == Preset.LAMBDA_SWEEP.value else run_experiment
    result = run(
        experiment,
        workers=workers,
        output_folder=app.output_folder,
        out=args.out,
        show_progress=True,
    )
    ExperimentRunner(experiment, workers).generate_summary(result.summary)
    if result.sweep is not None:
        print(result.sweep.to_string(index=False, float_format=lambda v: f"{v:.4g}"))
    for note in result.notes:
        print(note)

    if args.check:
        problems = AcceptanceCheck.for_preset(experiment.preset).violations(result.summary)
        for problem in problems:
            logger.error(f"Acceptance check failed: {problem}")
        if problems:
            return EXIT_CHECK_FAILED
        logger.success(f"Acceptance checks passed for {experiment.name}")
    return EXIT_OK


def read_dataset(paths: str, sigma: str) -> Dataset:
    """Load ``X``, ``y``, ``a`` (and Σ) from header-less CSV files.

    Unobserved outcomes may be blank; they are never read.
    """
    parts = paths.split(",")
    if len(parts) != 3:
        raise ValueError(f"--data expects three comma-separated paths, got {paths!r}")
    X, y, a = (pd.read_csv(path, header=None).to_numpy(dtype=float) for path in parts)
    a = a.reshape(-1)
    y = np.where(a == 1.0, y.reshape(-1), 0.0)
    sigma_matrix: Optional[np.ndarray] = None
    if sigma != "identity":
        sigma_matrix = pd.read_csv(sigma, header=None).to_numpy(dtype=float)
    return Dataset(X=X, y=y, a=a, sigma_matrix=sigma_matrix)


def estimate(args: argparse.Namespace) -> int:
    data = read_dataset(args.data, args.sigma)
    pipeline = EstimationPipeline(data, args.lam, LinkFunction.offset_logistic(args.link_floor))
    report = pipeline.run(args.method)
    print(f"method:   {report.method.value}")
    print(f"mu_out:   {report.mu_out_de:.10g}")
    print(f"tau_hat:  {report.tau_hat:.6g}")
    if args.out is not None:
        table = pd.DataFrame(
            {
                "coordinate": np.arange(data.p),
                "theta_de": report.theta_de,
                "standard_error": report.standard_errors,
            }
        )
        table.to_csv(args.out, index=False, float_format="%.17g")
        logger.info(f"Wrote coefficients to {args.out}")
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    """Main entry point.

    Returns:
        int: Exit code (0 success, 1 error, 2 failed acceptance check, 130 interrupted)
    """
    args = build_parser().parse_args(argv)

    try:
        app = load_config(args.config)
        setup_logging(app.logs_folder, app.verbose or args.verbose)
        if args.command == "simulate":
            app.ensure_directories()
            return simulate(args, app)
        return estimate(args)

    except KeyboardInterrupt:
        print("\n\n⚠️  Interrupted by user")
        return EXIT_INTERRUPTED
    except ExperimentAbortedError as e:
        logger.error(f"Experiment aborted: {e}")
        return EXIT_ERROR
    except Exception as e:
        logger.exception(f"Fatal error: {e}")
        print(f"\n❌ Fatal error: {e}")
        print("   Check logs for details")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
