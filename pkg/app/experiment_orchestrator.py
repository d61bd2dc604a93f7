# app/experiment_orchestrator.py

"""
Experiment orchestration: turns an ExperimentConfig into trained models and
artifact files, and hosts the operations behind the CLI subcommands.

Artifacts of `run_experiment` in the config's output directory:
    loss_curve.csv     epoch, mean_loss, wall_seconds
    report.json        final accuracy, timing, resolved config echo
    model.json         network weights plus kernel/standardization state
    trace.csv          per-update log (only with `trace: true`)
    decision_grid.csv  prediction grid (only with `grid_resolution`)
    timing.json        algorithm timing table (only with compare_timing=True)
"""

import json
import logging
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from app.config import Algorithm, DatasetConfig, DatasetKind, ExperimentConfig
from app.data import (
    THREE_BLOBS,
    TWO_BLOBS,
    Dataset,
    Standardization,
    encode_labels,
    generate_blobs,
    load_dataset,
    output_dim,
    standardize,
)
from app.errors import BackprojectionError, ConfigError, TrainingAbortedError, UnsupportedInputError
from app.nn.kernel import KernelKind, KernelModel, build_kernel_model, test_kernel_vectors
from app.nn.network import Batch, LayerSpec, Network, NetworkDocument, forward_pass, predict_from_outputs
from app.training.backprojection import train_backprojection
from app.training.backpropagation import TimingTable, epoch_timing_comparison, train_backpropagation
from app.training.gradcheck import GradcheckReport, run_gradcheck
from app.training.loop import TrainReport, UpdateRecord

logger = logging.getLogger(__name__)

# Fraction of the data bounding box added on every side of a default grid.
GRID_PADDING = 0.2


# --- MODEL BUNDLE ---

class KernelSnapshot(BaseModel):
    kind: KernelKind
    train_X: list[list[float]]


class StandardizationRecord(BaseModel):
    mean: list[float]
    std: list[float]


class ModelDocument(BaseModel):
    network: NetworkDocument
    kernel: Optional[KernelSnapshot] = None
    standardization: Optional[StandardizationRecord] = None
    # raw training box (x1_min, x1_max, x2_min, x2_max), 2-D data only
    data_box: Optional[tuple[float, float, float, float]] = None


@dataclass
class ModelBundle:
    """A trained network with everything needed to evaluate raw data points."""

    network: Network
    kernel_model: Optional[KernelModel] = None
    standardization: Optional[Standardization] = None
    data_box: Optional[tuple[float, float, float, float]] = None

    @property
    def input_dim(self) -> int:
        if self.standardization is not None:
            return self.standardization.mean.size
        if self.kernel_model is not None:
            return self.kernel_model.input_dim
        return self.network.input_dim

    def outputs(self, X: np.ndarray) -> np.ndarray:
        """Network outputs (p x b) for raw, column-wise data points."""
        X = np.asarray(X, dtype=float)
        if self.standardization is not None:
            X = self.standardization.apply(X)
        if self.kernel_model is not None:
            X = test_kernel_vectors(self.kernel_model, X)
        return forward_pass(self.network, X)[-1].activation

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict_from_outputs(self.outputs(X), self.network.layers[-1].spec.activation)

    def grid_bounds(self, padding: float = GRID_PADDING) -> tuple[float, float, float, float]:
        """Padded box around the training data the model was fit on."""
        if self.data_box is None:
            raise UnsupportedInputError("the model stores no training bounds; pass grid bounds explicitly")
        return pad_bounds(self.data_box, padding)

    def to_document(self) -> ModelDocument:
        kernel = None
        if self.kernel_model is not None:
            kernel = KernelSnapshot(kind=self.kernel_model.kind, train_X=self.kernel_model.train_X.tolist())
        standardization = None
        if self.standardization is not None:
            standardization = StandardizationRecord(
                mean=self.standardization.mean.tolist(), std=self.standardization.std.tolist()
            )
        return ModelDocument(
            network=self.network.to_document(), kernel=kernel, standardization=standardization, data_box=self.data_box
        )

    def save(self, path: Path) -> None:
        payload = self.to_document().model_dump(mode="json")
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "ModelBundle":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"model file not found: {path}")
        document = ModelDocument.model_validate_json(path.read_text(encoding="utf-8"))
        kernel_model = None
        if document.kernel is not None:
            kernel_model = build_kernel_model(document.kernel.kind, np.array(document.kernel.train_X))
        standardization = None
        if document.standardization is not None:
            standardization = Standardization(
                mean=np.array(document.standardization.mean), std=np.array(document.standardization.std)
            )
        return cls(Network.from_document(document.network), kernel_model, standardization, document.data_box)


@dataclass
class ExperimentResult:
    report: TrainReport
    output_dir: Path
    files: dict[str, Path] = field(default_factory=dict)


# --- DATA PREPARATION ---

def load_experiment_dataset(config: DatasetConfig) -> Dataset:
    if config.kind is DatasetKind.CSV:
        return load_dataset(Path(config.path))
    defaults = TWO_BLOBS if config.kind is DatasetKind.TWO_BLOBS else THREE_BLOBS
    return generate_blobs(
        n_per_class=config.n_per_class or defaults["n_per_class"],
        means=config.means or defaults["means"],
        variances=config.variances or defaults["variances"],
        seed=config.seed,
    )


def layer_specs(config: ExperimentConfig, input_dim: int, n_classes: int) -> list[LayerSpec]:
    arch = config.architecture
    dims = [input_dim, *arch.hidden_dims, output_dim(n_classes)]
    return [
        LayerSpec(in_dim=dims[m], out_dim=dims[m + 1], activation=activation, loss=loss)
        for m, (activation, loss) in enumerate(zip(arch.layer_activations(), arch.layer_losses()))
    ]


def bounding_box(X: np.ndarray) -> tuple[float, float, float, float]:
    """(x1_min, x1_max, x2_min, x2_max) over the first two rows of X."""
    low, high = X[:2].min(axis=1), X[:2].max(axis=1)
    return float(low[0]), float(high[0]), float(low[1]), float(high[1])


def pad_bounds(box: Sequence[float], padding: float = GRID_PADDING) -> tuple[float, float, float, float]:
    """Widen each axis of the box by `padding` times its extent on both sides."""
    x1_min, x1_max, x2_min, x2_max = box
    dx1, dx2 = padding * (x1_max - x1_min), padding * (x2_max - x2_min)
    return x1_min - dx1, x1_max + dx1, x2_min - dx2, x2_max + dx2


def default_grid_bounds(X: np.ndarray, padding: float = GRID_PADDING) -> tuple[float, float, float, float]:
    """Bounding box of the first two rows of X, widened by `padding` per side."""
    return pad_bounds(bounding_box(X), padding)


# --- OPERATIONS ---

def run_experiment(config: ExperimentConfig, compare_timing: bool = False) -> ExperimentResult:
    """
    Train one configuration and write its artifacts.

    Raises:
        ConfigError, DatasetError, KernelError: invalid configuration or data.
        TrainingAbortedError: training produced non-finite values.
    """
    config = config.resolve()
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running {config.algorithm.value} experiment into {output_dir}")

    dataset = load_experiment_dataset(config.dataset)
    X, stats = standardize(dataset.X) if config.dataset.standardize else (dataset.X, None)
    arch = config.architecture
    Y = encode_labels(dataset.labels, dataset.n_classes, arch.layer_activations()[-1])
    logger.info(f"Dataset: n={dataset.n}, d={dataset.dim}, classes={dataset.n_classes}")

    kernel_model = None
    inputs = X
    if config.algorithm is Algorithm.KERNEL_BACKPROJECTION:
        kernel_model = build_kernel_model(KernelKind(name=config.kernel.name, gamma=config.kernel.gamma), X)
        inputs = kernel_model.K_normalized
        config = config.model_copy(
            update={"kernel": config.kernel.model_copy(update={"gamma": kernel_model.kind.gamma})}
        )

    net = Network.initialize(layer_specs(config, inputs.shape[0], dataset.n_classes), config.seed)
    data = Batch(inputs, Y)
    train_config = config.train_config()
    trace: Optional[list[UpdateRecord]] = [] if config.trace else None

    if config.algorithm is Algorithm.BACKPROPAGATION:
        report = train_backpropagation(net, data, train_config)
    else:
        report = train_backprojection(net, data, train_config, trace=trace)

    result = ExperimentResult(report=report, output_dir=output_dir)
    data_box = bounding_box(dataset.X) if dataset.dim == 2 else None
    bundle = ModelBundle(net, kernel_model, stats, data_box)

    curve = pd.DataFrame({
        "epoch": np.arange(1, len(report.epoch_losses) + 1),
        "mean_loss": report.epoch_losses,
        "wall_seconds": report.epoch_seconds,
    })
    result.files["loss_curve"] = output_dir / "loss_curve.csv"
    curve.to_csv(result.files["loss_curve"], index=False, encoding="utf-8")

    seconds = np.array(report.epoch_seconds)
    summary = {
        "algorithm": config.algorithm.value,
        "final_accuracy": report.final_accuracy,
        "epochs_completed": len(report.epoch_losses),
        "final_loss": report.epoch_losses[-1] if report.epoch_losses else None,
        "timing": {
            "mean_epoch_seconds": float(seconds.mean()) if seconds.size else 0.0,
            "total_seconds": float(seconds.sum()),
        },
        "config": config.model_dump(mode="json"),
    }
    result.files["report"] = output_dir / "report.json"
    result.files["report"].write_text(json.dumps(summary, sort_keys=True, indent=2), encoding="utf-8")

    result.files["model"] = output_dir / "model.json"
    bundle.save(result.files["model"])

    if trace is not None:
        result.files["trace"] = output_dir / "trace.csv"
        pd.DataFrame([record.model_dump() for record in trace], columns=["epoch", "batch", "layer", "loss"]).to_csv(
            result.files["trace"], index=False, encoding="utf-8"
        )

    if config.grid_resolution is not None:
        grid = export_decision_grid(bundle, default_grid_bounds(dataset.X), config.grid_resolution)
        result.files["decision_grid"] = output_dir / "decision_grid.csv"
        grid.to_csv(result.files["decision_grid"], index=False, encoding="utf-8")

    if compare_timing:
        table = compare_algorithm_timing(config, dataset, X, Y)
        result.files["timing"] = output_dir / "timing.json"
        result.files["timing"].write_text(
            json.dumps(table.model_dump(mode="json"), sort_keys=True, indent=2), encoding="utf-8"
        )

    logger.info(f"Experiment complete: accuracy={report.final_accuracy:.3f}, artifacts in {output_dir}")
    return result


def compare_algorithm_timing(config: ExperimentConfig, dataset: Dataset, X: np.ndarray, Y: np.ndarray) -> TimingTable:
    """Timing table for the config's architecture in the input space."""
    kernel = KernelKind(name=config.kernel.name, gamma=config.kernel.gamma) if config.kernel else None
    specs = layer_specs(config, X.shape[0], dataset.n_classes)
    return epoch_timing_comparison(specs, Batch(X, Y), config.train_config(), kernel=kernel)


def export_decision_grid(
    bundle: ModelBundle, bounds: Sequence[float], resolution: int
) -> pd.DataFrame:
    """
    Evaluate the model on a resolution x resolution grid over
    bounds = (x1_min, x1_max, x2_min, x2_max) in raw data coordinates.
    """
    if bundle.input_dim != 2:
        raise UnsupportedInputError(f"decision grids need 2-D inputs, the model takes {bundle.input_dim}")
    if resolution < 2:
        raise ConfigError(f"grid resolution must be at least 2, got {resolution}")
    x1_min, x1_max, x2_min, x2_max = bounds
    x1, x2 = np.meshgrid(np.linspace(x1_min, x1_max, resolution), np.linspace(x2_min, x2_max, resolution))
    points = np.vstack([x1.ravel(), x2.ravel()])
    outputs = bundle.outputs(points)

    grid = pd.DataFrame({
        "x1": points[0],
        "x2": points[1],
        "predicted_class": predict_from_outputs(outputs, bundle.network.layers[-1].spec.activation),
    })
    for j, row in enumerate(outputs, start=1):
        grid[f"output_{j}"] = row
    return grid


def _run_config_payload(payload: dict) -> int:
    """Pool worker: run one serialized config and return its exit code."""
    config = ExperimentConfig.model_validate(payload)
    try:
        run_experiment(config)
    except TrainingAbortedError as e:
        logger.error(f"Run in {config.output_dir} aborted: {e}")
        return 3
    except BackprojectionError as e:
        logger.error(f"Run in {config.output_dir} failed: {e}")
        return 2
    return 0


def run_sweep(configs: Sequence[ExperimentConfig], workers: int = 1) -> list[int]:
    """Run independent configs concurrently; returns one exit code per config."""
    output_dirs = [Path(config.output_dir).resolve() for config in configs]
    if len(set(output_dirs)) != len(output_dirs):
        raise ConfigError("every config in a sweep needs its own output_dir")
    payloads = [config.model_dump(mode="json") for config in configs]
    logger.info(f"Sweeping {len(payloads)} configs on {workers} workers")
    if workers <= 1:
        return [_run_config_payload(payload) for payload in payloads]
    with Pool(workers) as pool:
        return pool.map(_run_config_payload, payloads)


def gradcheck_command(
    dims: Sequence[int],
    activations: Sequence[str],
    losses: Sequence[str],
    trials: int = 100,
    tolerance: float = 1e-4,
    seed: int = 0,
) -> GradcheckReport:
    """Gradient check; a single activation or loss is applied to every layer."""
    n_layers = len(dims) - 1
    if n_layers < 1:
        raise ConfigError("gradcheck needs at least two dims (one layer)")
    if len(activations) == 1:
        activations = list(activations) * n_layers
    if len(losses) == 1:
        losses = list(losses) * n_layers
    try:
        return run_gradcheck(dims, activations, losses, trials=trials, tolerance=tolerance, seed=seed)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def generate_dataset(config: DatasetConfig) -> Dataset:
    """Dataset for the `datagen` subcommand (blob kinds only)."""
    if config.kind is DatasetKind.CSV:
        raise ConfigError("datagen generates blob datasets; csv is an input format")
    return load_experiment_dataset(config)
