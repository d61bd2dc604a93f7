# app/main.py

"""
Command-line entry point.

    python -m app.main run --config experiment.json --epochs 50
    python -m app.main sweep a.json b.json --workers 2
    python -m app.main gradcheck --dims 2 3 2 --activations elu sigmoid
    python -m app.main grid --model runs/model.json --resolution 100 --output grid.csv
    python -m app.main datagen --kind three_blobs --output blobs.csv

Exit codes: 0 success, 1 failed gradient check, 2 invalid config or input,
3 training aborted on non-finite values.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import find_dotenv, load_dotenv
from pydantic import ValidationError

from app.config import DatasetConfig, DatasetKind, ExperimentConfig, apply_overrides, load_config
from app.data import load_dataset, save_dataset
from app.errors import BackprojectionError, ConfigError, TrainingAbortedError
from app.experiment_orchestrator import (
    ModelBundle,
    default_grid_bounds,
    export_decision_grid,
    generate_dataset,
    gradcheck_command,
    run_experiment,
    run_sweep,
)
from app.training.gradcheck import run_random_gradcheck


def load_environment() -> None:
    """Load .env from the working directory; variables already set take precedence."""
    load_dotenv(find_dotenv(usecwd=True))


# --- CONFIGURATION ---
load_environment()
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_GRADCHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ABORT = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="backprojection", description="Backprojection training experiments")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="train one configuration and write its artifacts")
    run.add_argument("--config", type=Path, help="JSON experiment config; flags override its fields")
    run.add_argument("--algorithm", choices=["backprojection", "kernel_backprojection", "backpropagation"])
    run.add_argument("--procedure", choices=["forward", "backward", "forward_backward"])
    run.add_argument("--learning-rate", type=float)
    run.add_argument("--batch-reduction", choices=["mean", "sum"], help="step with eta / b (mean) or eta (sum)")
    run.add_argument("--batch-size", type=int)
    run.add_argument("--epochs", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--no-shuffle", action="store_true")
    run.add_argument("--output-dir")
    run.add_argument("--kernel", choices=["linear", "rbf"])
    run.add_argument("--gamma", type=float, help="RBF bandwidth; needs --kernel or a kernel in the config")
    run.add_argument("--dataset", choices=[kind.value for kind in DatasetKind])
    run.add_argument("--data-path", help="CSV dataset (implies --dataset csv)")
    run.add_argument("--trace", action="store_true", help="write trace.csv with one row per layer update")
    run.add_argument("--grid-resolution", type=int)
    run.add_argument("--compare-timing", action="store_true", help="also write timing.json")

    sweep = commands.add_parser("sweep", help="run several configs concurrently")
    sweep.add_argument("configs", nargs="+", type=Path)
    sweep.add_argument("--workers", type=int, default=1)

    gradcheck = commands.add_parser("gradcheck", help="check analytic gradients against finite differences")
    gradcheck.add_argument("--dims", type=int, nargs="+", default=[2, 3, 2])
    gradcheck.add_argument("--activations", nargs="+", default=["elu", "sigmoid"])
    gradcheck.add_argument("--losses", nargs="+", default=["mse"])
    gradcheck.add_argument("--trials", type=int, default=100)
    gradcheck.add_argument("--tolerance", type=float, default=1e-4)
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument(
        "--random", action="store_true",
        help="draw depth, widths (<= 5), batch size (<= 8) and activations per trial; ignores --dims",
    )

    grid = commands.add_parser("grid", help="export a decision grid for a saved model")
    grid.add_argument("--model", type=Path, required=True)
    grid.add_argument("--resolution", type=int, default=100)
    grid.add_argument("--bounds", type=float, nargs=4, metavar=("X1_MIN", "X1_MAX", "X2_MIN", "X2_MAX"))
    grid.add_argument("--data", type=Path, help="CSV dataset whose padded bounding box sets the bounds")
    grid.add_argument("--output", type=Path, required=True)

    datagen = commands.add_parser("datagen", help="write a synthetic blob dataset to CSV")
    datagen.add_argument("--kind", choices=["two_blobs", "three_blobs"], default="two_blobs")
    datagen.add_argument("--seed", type=int, default=0)
    datagen.add_argument("--n-per-class", type=int, nargs="+", help="samples per class for custom blobs")
    datagen.add_argument("--means", type=float, nargs="+", help="class means, flattened class by class")
    datagen.add_argument("--variances", type=float, nargs="+", help="isotropic variance per class")
    datagen.add_argument("--output", type=Path, required=True)

    return parser


def _resolve_run_config(args: argparse.Namespace) -> ExperimentConfig:
    base = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        "algorithm": args.algorithm,
        "procedure": args.procedure,
        "learning_rate": args.learning_rate,
        "batch_reduction": args.batch_reduction,
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "seed": args.seed,
        "output_dir": args.output_dir,
        "grid_resolution": args.grid_resolution,
    }
    if args.no_shuffle:
        overrides["shuffle"] = False
    if args.trace:
        overrides["trace"] = True
    if args.kernel or args.gamma is not None:
        overrides["kernel"] = _kernel_override(base, args.kernel, args.gamma)
    if args.dataset or args.data_path:
        dataset = base.dataset.model_dump(mode="json")
        dataset["kind"] = DatasetKind.CSV.value if args.data_path else args.dataset
        dataset["path"] = args.data_path
        overrides["dataset"] = dataset
    return apply_overrides(base, overrides)


def _kernel_override(base: ExperimentConfig, name: Optional[str], gamma: Optional[float]) -> dict:
    """Merge --kernel and --gamma into the kernel the config already names."""
    if base.kernel is None and name is None:
        raise ConfigError("--gamma needs --kernel or a kernel in the config")
    kernel = base.kernel.model_dump(mode="json") if base.kernel is not None else {}
    if name is not None:
        kernel["name"] = name
    if gamma is not None:
        kernel["gamma"] = gamma
    return kernel


def _command_run(args: argparse.Namespace) -> int:
    config = _resolve_run_config(args)
    result = run_experiment(config, compare_timing=args.compare_timing)
    print(json.dumps({name: str(path) for name, path in result.files.items()}, sort_keys=True, indent=2))
    return EXIT_OK


def _command_sweep(args: argparse.Namespace) -> int:
    configs = [load_config(path) for path in args.configs]
    codes = run_sweep(configs, workers=args.workers)
    for path, code in zip(args.configs, codes):
        logger.info(f"{path}: exit code {code}")
    return max(codes, default=EXIT_OK)


def _command_gradcheck(args: argparse.Namespace) -> int:
    if args.random:
        report = run_random_gradcheck(trials=args.trials, tolerance=args.tolerance, seed=args.seed)
    else:
        report = gradcheck_command(
            args.dims, args.activations, args.losses,
            trials=args.trials, tolerance=args.tolerance, seed=args.seed,
        )
    print(json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2))
    return EXIT_OK if report.passed else EXIT_GRADCHECK_FAILED


def _command_grid(args: argparse.Namespace) -> int:
    bundle = ModelBundle.load(args.model)
    if args.bounds:
        bounds = args.bounds
    elif args.data:
        bounds = default_grid_bounds(load_dataset(args.data).X)
    else:
        bounds = bundle.grid_bounds()
    grid = export_decision_grid(bundle, bounds, args.resolution)
    grid.to_csv(args.output, index=False, encoding="utf-8")
    logger.info(f"Wrote {len(grid)} grid points to {args.output}")
    return EXIT_OK


def _command_datagen(args: argparse.Namespace) -> int:
    means = None
    if args.means:
        n_classes = len(args.n_per_class or args.variances or [])
        if not n_classes or len(args.means) % n_classes:
            logger.error("--means needs --n-per-class or --variances and one point per class")
            return EXIT_CONFIG_ERROR
        dim = len(args.means) // n_classes
        means = [args.means[i:i + dim] for i in range(0, len(args.means), dim)]
    config = DatasetConfig(
        kind=args.kind, seed=args.seed, n_per_class=args.n_per_class, means=means, variances=args.variances
    )
    dataset = generate_dataset(config)
    save_dataset(dataset, args.output)
    return EXIT_OK


COMMANDS = {
    "run": _command_run,
    "sweep": _command_sweep,
    "gradcheck": _command_gradcheck,
    "grid": _command_grid,
    "datagen": _command_datagen,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except TrainingAbortedError as e:
        logger.error(f"Training aborted: {e}")
        return EXIT_NUMERICAL_ABORT
    except (ValidationError, BackprojectionError) as e:
        logger.error(f"Invalid configuration or input: {e}")
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
