# app/config.py

"""
Experiment configuration models.

A config is a single JSON document validated by pydantic. `resolve()` fills
every default that depends on other fields (learning rate, kernel bandwidth
is resolved later against the data), so report.json can echo exactly what ran.
"""

import os
from enum import Enum
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field, model_validator

from app.errors import ConfigError
from app.nn.activations import ActivationKind
from app.nn.kernel import KernelKind
from app.nn.losses import LossKind
from app.training.loop import BatchReduction, Procedure, TrainConfig

# --- CONFIGURATION ---
INPUT_SPACE_LEARNING_RATE = 1e-4
KERNEL_LEARNING_RATE = 1e-5


def default_output_dir() -> str:
    # read when a config is built, not at import
    return os.getenv("BACKPROJECTION_OUTPUT_DIR", "runs")


class Algorithm(str, Enum):
    BACKPROJECTION = "backprojection"
    KERNEL_BACKPROJECTION = "kernel_backprojection"
    BACKPROPAGATION = "backpropagation"


class DatasetKind(str, Enum):
    TWO_BLOBS = "two_blobs"
    THREE_BLOBS = "three_blobs"
    CSV = "csv"


class DatasetConfig(BaseModel):
    kind: DatasetKind = DatasetKind.TWO_BLOBS
    path: Optional[str] = None
    n_per_class: Optional[list[int]] = None
    means: Optional[list[list[float]]] = None
    variances: Optional[list[float]] = None
    seed: int = 0
    standardize: bool = True

    @model_validator(mode="after")
    def _check_source(self):
        if self.kind is DatasetKind.CSV and not self.path:
            raise ValueError("a csv dataset needs a path")
        if self.kind is not DatasetKind.CSV and self.path:
            raise ValueError(f"path is only used by csv datasets, not {self.kind.value}")
        return self


class ArchitectureConfig(BaseModel):
    hidden_dims: list[int] = Field(default_factory=lambda: [15, 20])
    hidden_activation: ActivationKind = ActivationKind.ELU
    output_activation: ActivationKind = ActivationKind.SIGMOID
    hidden_loss: LossKind = LossKind.MSE
    output_loss: LossKind = LossKind.MSE
    # explicit per-layer lists override the hidden/output defaults
    activations: Optional[list[ActivationKind]] = None
    losses: Optional[list[LossKind]] = None

    @property
    def n_layers(self) -> int:
        return len(self.hidden_dims) + 1

    @model_validator(mode="after")
    def _check_layers(self):
        if any(dim < 1 for dim in self.hidden_dims):
            raise ValueError(f"hidden layer widths must be positive, got {self.hidden_dims}")
        for name in ("activations", "losses"):
            values = getattr(self, name)
            if values is not None and len(values) != self.n_layers:
                raise ValueError(f"{name} lists {len(values)} entries for {self.n_layers} layers")
        for m, (activation, loss) in enumerate(zip(self.layer_activations(), self.layer_losses()), start=1):
            if loss is LossKind.CROSS_ENTROPY and activation is not ActivationKind.SIGMOID:
                raise ValueError(
                    f"layer {m}: cross_entropy needs strictly positive outputs, "
                    f"which only sigmoid guarantees (got {activation.value})"
                )
        return self

    def layer_activations(self) -> list[ActivationKind]:
        if self.activations is not None:
            return list(self.activations)
        return [self.hidden_activation] * len(self.hidden_dims) + [self.output_activation]

    def layer_losses(self) -> list[LossKind]:
        if self.losses is not None:
            return list(self.losses)
        return [self.hidden_loss] * len(self.hidden_dims) + [self.output_loss]


class KernelConfig(KernelKind):
    @model_validator(mode="before")
    @classmethod
    def _accept_bare_name(cls, data):
        # "kernel": "rbf" is shorthand for {"name": "rbf"}
        if isinstance(data, str):
            return {"name": data}
        return data


class ExperimentConfig(BaseModel):
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    architecture: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    algorithm: Algorithm = Algorithm.BACKPROJECTION
    kernel: Optional[KernelConfig] = None
    procedure: Procedure = Procedure.BACKWARD
    learning_rate: Optional[float] = Field(default=None, gt=0)
    batch_reduction: BatchReduction = BatchReduction.MEAN
    batch_size: int = Field(default=30, gt=0)
    epochs: int = Field(default=200, ge=0)
    seed: int = 0
    shuffle: bool = True
    output_dir: str = Field(default_factory=default_output_dir)
    trace: bool = False
    grid_resolution: Optional[int] = Field(default=None, ge=2)

    @model_validator(mode="after")
    def _check_kernel(self):
        is_kernel = self.algorithm is Algorithm.KERNEL_BACKPROJECTION
        if is_kernel and self.kernel is None:
            raise ValueError("kernel_backprojection needs a kernel spec")
        if not is_kernel and self.kernel is not None:
            raise ValueError(f"a kernel spec is only valid with kernel_backprojection, not {self.algorithm.value}")
        return self

    def resolve(self) -> "ExperimentConfig":
        """Copy with the algorithm-dependent learning rate filled in."""
        if self.learning_rate is not None:
            return self.model_copy(deep=True)
        rate = KERNEL_LEARNING_RATE if self.algorithm is Algorithm.KERNEL_BACKPROJECTION else INPUT_SPACE_LEARNING_RATE
        return self.model_copy(update={"learning_rate": rate}, deep=True)

    def train_config(self) -> TrainConfig:
        if self.learning_rate is None:
            raise ConfigError("resolve() the experiment config before building a TrainConfig")
        return TrainConfig(
            procedure=self.procedure,
            learning_rate=self.learning_rate,
            batch_reduction=self.batch_reduction,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            shuffle=self.shuffle,
        )


def load_config(path: Path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a JSON config; top-level `overrides` (from CLI flags) win over the file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    config = ExperimentConfig.model_validate_json(path.read_text(encoding="utf-8"))
    return apply_overrides(config, overrides or {})


def apply_overrides(config: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    payload = config.model_dump(mode="json")
    for key, value in overrides.items():
        if value is not None:
            payload[key] = value
    return ExperimentConfig.model_validate(payload)
