# app/training/gradcheck.py

"""
Randomized gradient checks for the layer gradient and the backprop baseline.

Each trial draws a small network and batch (`run_random_gradcheck` also
draws the architecture), then compares:
  - layer_gradient against central finite differences of L_m,
  - layer_gradient against the explicit Kronecker construction,
  - backprop_gradients against finite differences of the end-to-end loss.
"""

import logging
from typing import Sequence

import numpy as np
from pydantic import BaseModel

from app.nn.activations import ActivationKind
from app.nn.losses import LossKind
from app.nn.network import Batch, LayerSpec, Network
from app.training.backprojection import finite_difference_gradient, layer_gradient, layer_gradient_kronecker
from app.training.backpropagation import backprop_gradients, finite_difference_network_gradients

logger = logging.getLogger(__name__)

# Largest layer width the Kronecker oracle is run on.
MAX_KRONECKER_DIM = 8


class GradcheckReport(BaseModel):
    dims: list[int]
    activations: list[ActivationKind]
    losses: list[LossKind]
    trials: int
    tolerance: float
    max_relative_error: float
    max_kronecker_error: float
    max_backprop_relative_error: float
    passed: bool


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Relative Frobenius error, with the scale floored at 1e-8."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def feasible_targets(
    rng: np.random.Generator, activation: ActivationKind, loss: LossKind, shape: tuple[int, int]
) -> np.ndarray:
    """Random targets inside the output range the last layer can reach."""
    if loss is LossKind.CROSS_ENTROPY or activation is ActivationKind.SIGMOID:
        return rng.uniform(0.05, 0.95, size=shape)
    if activation is ActivationKind.TANH:
        return rng.uniform(-0.9, 0.9, size=shape)
    if activation is ActivationKind.ELU:
        return rng.uniform(-0.9, 2.0, size=shape)
    return rng.normal(size=shape)


def random_instance(
    rng: np.random.Generator,
    dims: Sequence[int],
    activations: Sequence[ActivationKind | str],
    losses: Sequence[LossKind | str],
    batch_size: int,
) -> tuple[Network, Batch]:
    """
    Draw a network and batch for the given architecture.

    With any cross_entropy layer the inputs and weights are drawn positive,
    which keeps every pre-activation and activation strictly positive.
    """
    activations = [ActivationKind(a) for a in activations]
    losses = [LossKind(loss) for loss in losses]
    specs = [
        LayerSpec(in_dim=dims[m], out_dim=dims[m + 1], activation=activations[m], loss=losses[m])
        for m in range(len(dims) - 1)
    ]
    net = Network.initialize(specs, seed=int(rng.integers(2**31)))
    positive = LossKind.CROSS_ENTROPY in losses
    if positive:
        for m in range(1, net.n_layers + 1):
            net.set_weights(m, np.abs(net.weights(m)))
        X = rng.uniform(0.1, 1.0, size=(dims[0], batch_size))
    else:
        X = rng.normal(size=(dims[0], batch_size))
    Y = feasible_targets(rng, activations[-1], losses[-1], (dims[-1], batch_size))
    return net, Batch(X, Y)


def instance_errors(net: Network, batch: Batch, h: float = 1e-5) -> tuple[float, float, float]:
    """Worst relative errors (finite differences, Kronecker, backprop) over the layers of one instance."""
    fd = kron = backprop = 0.0
    for m in range(1, net.n_layers + 1):
        analytic = layer_gradient(net, batch, m)
        fd = max(fd, relative_error(analytic, finite_difference_gradient(net, batch, m, h)))
        kron = max(kron, relative_error(analytic, layer_gradient_kronecker(net, batch, m)))
    for analytic, numeric in zip(backprop_gradients(net, batch), finite_difference_network_gradients(net, batch, h)):
        backprop = max(backprop, relative_error(analytic, numeric))
    return fd, kron, backprop


def run_gradcheck(
    dims: Sequence[int],
    activations: Sequence[ActivationKind | str],
    losses: Sequence[LossKind | str],
    trials: int = 100,
    tolerance: float = 1e-4,
    batch_size: int = 4,
    h: float = 1e-5,
    seed: int = 0,
) -> GradcheckReport:
    """Run `trials` random instances; the check passes when every error is below `tolerance`."""
    if len(activations) != len(dims) - 1 or len(losses) != len(dims) - 1:
        raise ValueError(f"{len(dims) - 1} layers need as many activations and losses")
    if max(dims) > MAX_KRONECKER_DIM:
        raise ValueError(f"layer widths are limited to {MAX_KRONECKER_DIM} for the Kronecker oracle")

    rng = np.random.default_rng(seed)
    worst_fd = worst_kron = worst_backprop = 0.0
    for _ in range(trials):
        net, batch = random_instance(rng, dims, activations, losses, batch_size)
        fd, kron, backprop = instance_errors(net, batch, h)
        worst_fd, worst_kron, worst_backprop = max(worst_fd, fd), max(worst_kron, kron), max(worst_backprop, backprop)

    passed = worst_fd < tolerance and worst_kron < tolerance and worst_backprop < tolerance
    report = GradcheckReport(
        dims=list(dims),
        activations=list(activations),
        losses=list(losses),
        trials=trials,
        tolerance=tolerance,
        max_relative_error=worst_fd,
        max_kronecker_error=worst_kron,
        max_backprop_relative_error=worst_backprop,
        passed=passed,
    )
    if not passed:
        logger.warning(f"Gradient check failed: {report.model_dump_json()}")
    return report


class RandomGradcheckReport(BaseModel):
    trials: int
    tolerance: float
    # "activation/loss" of the last layer, one entry per combination drawn
    output_combinations: list[str]
    mixed_loss_trials: int
    max_relative_error: float
    max_kronecker_error: float
    max_backprop_relative_error: float
    passed: bool


def run_random_gradcheck(
    trials: int = 100,
    tolerance: float = 1e-4,
    max_dim: int = 5,
    max_batch: int = 8,
    max_layers: int = 3,
    h: float = 1e-5,
    seed: int = 0,
) -> RandomGradcheckReport:
    """
    Gradient check over randomly drawn architectures.

    Every trial draws its own depth, widths, batch size and hidden
    activations. The last layer cycles through every activation/loss pair
    while hidden layers keep mse, so cross_entropy outputs are also checked
    on top of mse hidden layers.
    """
    if max_dim > MAX_KRONECKER_DIM:
        raise ValueError(f"layer widths are limited to {MAX_KRONECKER_DIM} for the Kronecker oracle")
    kinds, loss_kinds = list(ActivationKind), list(LossKind)
    rng = np.random.default_rng(seed)
    worst_fd = worst_kron = worst_backprop = 0.0
    combinations, mixed = set(), 0
    for trial in range(trials):
        n_layers = int(rng.integers(1, max_layers + 1))
        dims = [int(d) for d in rng.integers(1, max_dim + 1, size=n_layers + 1)]
        last_activation = kinds[trial % len(kinds)]
        last_loss = loss_kinds[(trial // len(kinds)) % len(loss_kinds)]
        activations = [kinds[int(i)] for i in rng.integers(len(kinds), size=n_layers - 1)] + [last_activation]
        losses = [LossKind.MSE] * (n_layers - 1) + [last_loss]
        batch_size = int(rng.integers(1, max_batch + 1))

        net, batch = random_instance(rng, dims, activations, losses, batch_size)
        fd, kron, backprop = instance_errors(net, batch, h)
        worst_fd, worst_kron, worst_backprop = max(worst_fd, fd), max(worst_kron, kron), max(worst_backprop, backprop)
        combinations.add(f"{last_activation.value}/{last_loss.value}")
        mixed += n_layers > 1 and last_loss is LossKind.CROSS_ENTROPY

    passed = worst_fd < tolerance and worst_kron < tolerance and worst_backprop < tolerance
    report = RandomGradcheckReport(
        trials=trials,
        tolerance=tolerance,
        output_combinations=sorted(combinations),
        mixed_loss_trials=mixed,
        max_relative_error=worst_fd,
        max_kronecker_error=worst_kron,
        max_backprop_relative_error=worst_backprop,
        passed=passed,
    )
    if not passed:
        logger.warning(f"Random gradient check failed: {report.model_dump_json()}")
    return report
