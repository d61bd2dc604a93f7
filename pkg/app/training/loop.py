# app/training/loop.py

"""
Mini-batch epoch loop shared by the backprojection and backpropagation trainers.

Both trainers hand `run_epochs` a batch step; everything else (shuffling,
batching, timing, loss bookkeeping, non-finite detection) happens here, so
the two algorithms see exactly the same batch schedule for a given seed.
"""

import logging
import math
import time
from enum import Enum
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, Field

from app.data import decode_labels
from app.errors import (
    ActivationDomainError,
    ConfigError,
    LossDomainError,
    TrainingAbortedError,
)
from app.nn.losses import loss_value
from app.nn.network import Batch, Network, forward_pass, predict

logger = logging.getLogger(__name__)


class Procedure(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    FORWARD_BACKWARD = "forward_backward"


class BatchReduction(str, Enum):
    """How a batch's summed gradient is turned into a step."""

    # step with eta / b, so the per-sample step size does not grow with b
    MEAN = "mean"
    # step with eta on the summed gradient, literally U <- U - eta dL/dU
    SUM = "sum"


class TrainConfig(BaseModel):
    procedure: Procedure = Procedure.BACKWARD
    learning_rate: float = Field(default=1e-4, gt=0)
    batch_size: int = Field(default=30, gt=0)
    epochs: int = Field(default=200, ge=0)
    seed: int = 0
    shuffle: bool = True
    batch_reduction: BatchReduction = BatchReduction.MEAN

    def step_size(self, batch_size: int) -> float:
        """Factor applied to the summed gradient of a batch of `batch_size` samples."""
        if self.batch_reduction is BatchReduction.MEAN:
            return self.learning_rate / batch_size
        return self.learning_rate


class TrainReport(BaseModel):
    epoch_losses: list[float] = Field(default_factory=list)
    epoch_seconds: list[float] = Field(default_factory=list)
    final_accuracy: float = Field(ge=0.0, le=1.0)


class UpdateRecord(BaseModel):
    epoch: int
    batch: int
    layer: int
    loss: float


# step(net, batch, epoch, batch_index); batch_index is 1-based within the epoch
BatchStep = Callable[[Network, Batch, int, int], None]


def network_loss(net: Network, data: Batch) -> float:
    """Mean per-sample loss of the network output against the encoded labels."""
    outputs = forward_pass(net, data.X)[-1].activation
    return loss_value(net.layers[-1].spec.loss, outputs, data.Y) / data.size


def training_accuracy(net: Network, data: Batch) -> float:
    return float(np.mean(predict(net, data.X) == decode_labels(data.Y)))


def batch_indices(n: int, batch_size: int, rng: np.random.Generator, shuffle: bool) -> list[np.ndarray]:
    """Split 0..n-1 into ceil(n/b) batches; the last one keeps the remainder."""
    order = rng.permutation(n) if shuffle else np.arange(n)
    return [order[start:start + batch_size] for start in range(0, n, batch_size)]


def run_epochs(net: Network, data: Batch, config: TrainConfig, step: BatchStep) -> TrainReport:
    if config.batch_size > data.size:
        raise ConfigError(f"batch size {config.batch_size} exceeds the {data.size} training samples")

    rng = np.random.default_rng(config.seed)
    report = TrainReport(final_accuracy=0.0)

    for epoch in range(1, config.epochs + 1):
        batches = batch_indices(data.size, config.batch_size, rng, config.shuffle)
        start = time.perf_counter()
        for batch_index, index in enumerate(batches, start=1):
            try:
                step(net, data.columns(index), epoch, batch_index)
            except (ActivationDomainError, LossDomainError, FloatingPointError) as e:
                logger.warning(f"Numerical failure in epoch {epoch}, batch {batch_index}: {e}")
                raise TrainingAbortedError(str(e), epoch, batch_index) from e
        elapsed = time.perf_counter() - start

        # whole-set loss, so no batch index applies
        try:
            loss = network_loss(net, data)
        except LossDomainError as e:
            raise TrainingAbortedError(str(e), epoch) from e
        if not math.isfinite(loss):
            logger.warning(f"Non-finite training loss after epoch {epoch}")
            raise TrainingAbortedError(f"training loss is {loss}", epoch)

        report.epoch_losses.append(loss)
        report.epoch_seconds.append(elapsed)
        logger.debug(f"Epoch {epoch}/{config.epochs}: loss={loss:.6g} time={elapsed:.4f}s")

    report.final_accuracy = training_accuracy(net, data)
    return report


def check_finite(values: np.ndarray, what: str, epoch: int, batch: int, layer: Optional[int] = None) -> None:
    if not np.isfinite(values).all():
        raise TrainingAbortedError(f"{what} became non-finite", epoch, batch, layer)
