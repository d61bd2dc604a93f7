# app/training/backpropagation.py

"""
End-to-end backpropagation baseline and the per-epoch timing comparison.

Backpropagation minimizes the last layer's loss on the network output and
updates every layer from a single reverse-mode pass per batch. It shares
the epoch loop with backprojection, so for a one-layer network the two
produce the same weight trajectory.
"""

import logging
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel

from app.errors import LossDomainError, TrainingAbortedError
from app.nn.activations import act_derivative
from app.nn.kernel import KernelKind, build_kernel_model
from app.nn.losses import loss_grad_wrt_activation, loss_value
from app.nn.network import Batch, LayerSpec, Network, forward_pass
from app.training.backprojection import train_backprojection
from app.training.loop import Procedure, TrainConfig, TrainReport, check_finite, run_epochs

logger = logging.getLogger(__name__)

BACKPROJECTION = "backprojection"
KERNEL_BACKPROJECTION = "kernel_backprojection"
BACKPROPAGATION = "backpropagation"


def network_objective(net: Network, batch: Batch) -> float:
    """Summed last-layer loss of the network output over the batch."""
    outputs = forward_pass(net, batch.X)[-1].activation
    return loss_value(net.layers[-1].spec.loss, outputs, batch.Y)


def backprop_gradients(net: Network, batch: Batch) -> list[np.ndarray]:
    """Gradients of `network_objective` for U_1..U_L, in layer order."""
    states = forward_pass(net, batch.X)
    last = net.layers[-1].spec
    g = loss_grad_wrt_activation(last.loss, states[-1].activation, batch.Y)
    delta = g * act_derivative(last.activation, states[-1].pre_activation)

    gradients: list[np.ndarray] = [np.empty(0)] * net.n_layers
    for m in range(net.n_layers, 0, -1):
        gradients[m - 1] = states[m - 1].activation @ delta.T
        if m > 1:
            below = net.layer(m - 1).spec
            delta = (net.weights(m) @ delta) * act_derivative(below.activation, states[m - 1].pre_activation)
    return gradients


def finite_difference_network_gradients(net: Network, batch: Batch, h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of `network_objective` over every weight of every layer."""
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    gradients = []
    for m in range(1, net.n_layers + 1):
        original = net.weights(m)
        gradient = np.zeros_like(original)
        for j, k in np.ndindex(*original.shape):
            step = np.zeros_like(original)
            step[j, k] = h
            net.set_weights(m, original + step)
            plus = network_objective(net, batch)
            net.set_weights(m, original - step)
            minus = network_objective(net, batch)
            gradient[j, k] = (plus - minus) / (2 * h)
        net.set_weights(m, original)
        gradients.append(gradient)
    return gradients


def train_backpropagation(net: Network, data: Batch, config: TrainConfig) -> TrainReport:
    """Train `net` in place with mini-batch gradient descent on the end-to-end loss."""
    logger.info(
        f"Backpropagation: {net.n_layers} layers, n={data.size}, b={config.batch_size}, "
        f"epochs={config.epochs}, eta={config.learning_rate} ({config.batch_reduction.value})"
    )

    def step(net: Network, batch: Batch, epoch: int, batch_index: int) -> None:
        eta = config.step_size(batch.size)
        try:
            gradients = backprop_gradients(net, batch)
        except LossDomainError as e:
            raise TrainingAbortedError(str(e), epoch, batch_index) from e
        for m, gradient in enumerate(gradients, start=1):
            updated = net.weights(m) - eta * gradient
            check_finite(updated, "layer weights", epoch, batch_index, m)
            net.set_weights(m, updated)

    report = run_epochs(net, data, config, step)
    logger.info(f"Backpropagation finished with training accuracy {report.final_accuracy:.3f}")
    return report


class EpochTiming(BaseModel):
    mean_epoch_seconds: float
    std: float


class TimingTable(BaseModel):
    timings: dict[str, EpochTiming]
    procedure: Procedure
    backprojection_to_backpropagation: float
    warmup_epochs: int
    timed_epochs: int


def epoch_timing_comparison(
    arch: Sequence[LayerSpec],
    data: Batch,
    config: TrainConfig,
    kernel_data: Optional[np.ndarray] = None,
    kernel: Optional[KernelKind] = None,
    warmup_epochs: int = 2,
    timed_epochs: int = 20,
) -> TimingTable:
    """
    Mean per-epoch wall time of backprojection, kernel backprojection and
    backpropagation on the same architecture and batch schedule.

    Args:
        arch: layer specs for input-space training; the kernel variant
            replaces the first layer's in_dim with n.
        data: training batch in the input space.
        config: shared settings; `epochs` is replaced by warmup + timed.
            Both backprojection variants sweep with `config.procedure`.
        kernel_data: raw d x n samples for the kernel model, defaults to data.X.
        kernel: kernel kind, defaults to RBF with gamma 1/d.
    """
    kernel = kernel or KernelKind(name="rbf")
    kernel_model = build_kernel_model(kernel, data.X if kernel_data is None else kernel_data)
    kernel_arch = [arch[0].model_copy(update={"in_dim": kernel_model.n}), *arch[1:]]
    run_config = config.model_copy(update={"epochs": warmup_epochs + timed_epochs})

    runs = {
        BACKPROJECTION: (arch, data, train_backprojection),
        KERNEL_BACKPROJECTION: (kernel_arch, Batch(kernel_model.K_normalized, data.Y), train_backprojection),
        BACKPROPAGATION: (arch, data, train_backpropagation),
    }
    timings = {}
    for name, (specs, batch, trainer) in runs.items():
        net = Network.initialize(specs, config.seed)
        report = trainer(net, batch, run_config)
        seconds = np.array(report.epoch_seconds[warmup_epochs:])
        timings[name] = EpochTiming(mean_epoch_seconds=float(seconds.mean()), std=float(seconds.std()))
        logger.info(f"{name}: {timings[name].mean_epoch_seconds:.5f}s per epoch")

    ratio = timings[BACKPROJECTION].mean_epoch_seconds / timings[BACKPROPAGATION].mean_epoch_seconds
    return TimingTable(
        timings=timings,
        backprojection_to_backpropagation=ratio,
        procedure=config.procedure,
        warmup_epochs=warmup_epochs,
        timed_epochs=timed_epochs,
    )
