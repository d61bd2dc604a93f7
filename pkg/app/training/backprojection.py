# app/training/backprojection.py

"""
Layer-wise backprojection training.

To update layer m the batch is projected forward through layers 1..m-1,
the labels are backprojected down to layer m, and U_m takes one gradient
step on the layer loss

    L_m = sum_i loss(f_m(U_m^T x_i^{(m-1)}), y_i^{(m)}).

During training a batch's forward activations and backprojected targets
are computed once per sweep and refreshed one layer at a time (LayerSweep);
`layer_problem` recomputes them from scratch for the standalone helpers.

The production gradient uses the outer-product form
X^{(m-1)} (g * f'_m(Z^{(m)}))^T; `layer_gradient_kronecker` evaluates the
same quantity through the explicit Kronecker/vec^{-1} construction and is
kept as a cross-check.
"""

import logging
from typing import NamedTuple, Optional, Sequence

import numpy as np

from app.errors import ActivationDomainError, LossDomainError, TrainingAbortedError
from app.nn.activations import act_derivative, act_forward, derivative_from_output
from app.nn.losses import LossKind, loss_grad_wrt_activation, loss_value
from app.nn.network import Batch, Layer, LayerSpec, Network, backproject_labels, backproject_step, forward_pass
from app.training.loop import (
    Procedure,
    TrainConfig,
    TrainReport,
    UpdateRecord,
    check_finite,
    run_epochs,
)

logger = logging.getLogger(__name__)


class LayerProblem(NamedTuple):
    """Frozen inputs X^{(m-1)}, pre-activations Z^{(m)}, activations f(Z^{(m)}) and targets Y^{(m)}."""

    inputs: np.ndarray
    pre_activation: np.ndarray
    activation: np.ndarray
    targets: np.ndarray


def layer_problem(net: Network, batch: Batch, m: int) -> LayerProblem:
    states = forward_pass(net, batch.X, upto=m)
    targets = backproject_labels(net, batch.Y, downto=m)
    return LayerProblem(states[m - 1].activation, states[m].pre_activation, states[m].activation, targets)


def _scaled_delta(spec: LayerSpec, problem: LayerProblem) -> tuple[float, np.ndarray]:
    """(c, delta) with dL/dZ = c * delta."""
    derivative = derivative_from_output(spec.activation, problem.activation)
    if spec.loss is LossKind.MSE:
        # 2 (f - y), with the 2 left to the caller
        return 2.0, (problem.activation - problem.targets) * derivative
    g = loss_grad_wrt_activation(spec.loss, problem.activation, problem.targets)
    return 1.0, g * derivative


def outer_product_gradient(spec: LayerSpec, problem: LayerProblem) -> np.ndarray:
    """dL/dU = X^{(m-1)} (g * f'(Z))^T with g the loss gradient w.r.t. the activation."""
    scale, delta = _scaled_delta(spec, problem)
    return scale * (problem.inputs @ delta.T)


def layer_loss(net: Network, batch: Batch, m: int) -> float:
    problem = layer_problem(net, batch, m)
    return loss_value(net.layer(m).spec.loss, problem.activation, problem.targets)


def layer_gradient(net: Network, batch: Batch, m: int) -> np.ndarray:
    """Gradient of L_m with respect to U_m, shape (d_{m-1}, d_m)."""
    return outer_product_gradient(net.layer(m).spec, layer_problem(net, batch, m))


def layer_gradient_kronecker(net: Network, batch: Batch, m: int) -> np.ndarray:
    """
    Same gradient, summed per sample as

        vec^{-1}[ (I_{d_m} kron x_i^T)^T diag(f'(z_i))^T dloss/df ]

    with column-major vectorization. Memory grows with d_m^2 d_{m-1}, so
    this is meant for small layers only.
    """
    spec = net.layer(m).spec
    problem = layer_problem(net, batch, m)
    d_in, d_out = spec.in_dim, spec.out_dim
    gradient = np.zeros((d_in, d_out))
    for i in range(batch.size):
        x_i = problem.inputs[:, i]
        z_i = problem.pre_activation[:, i]
        dz_dU = np.kron(np.eye(d_out), x_i[None, :])
        df_dz = np.diag(act_derivative(spec.activation, z_i))
        dl_df = loss_grad_wrt_activation(spec.loss, act_forward(spec.activation, z_i), problem.targets[:, i])
        column = dz_dU.T @ df_dz.T @ dl_df
        gradient += column.reshape((d_in, d_out), order="F")
    return gradient


def finite_difference_gradient(net: Network, batch: Batch, m: int, h: float = 1e-5) -> np.ndarray:
    """Central differences of L_m over every entry of U_m, targets held fixed."""
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    spec = net.layer(m).spec
    problem = layer_problem(net, batch, m)
    weights = net.weights(m)

    def loss_at(U: np.ndarray) -> float:
        return loss_value(spec.loss, act_forward(spec.activation, U.T @ problem.inputs), problem.targets)

    gradient = np.zeros_like(weights)
    for j, k in np.ndindex(*weights.shape):
        step = np.zeros_like(weights)
        step[j, k] = h
        gradient[j, k] = (loss_at(weights + step) - loss_at(weights - step)) / (2 * h)
    return gradient


class LayerSweep:
    """
    Inputs and targets of one batch, kept current while a run of
    consecutive layers is updated in a monotone order.

    Going up, updating U_m only changes X^{(m)}; going down, it only changes
    Y^{(m-1)}, and every layer at or below the one being updated still holds
    the forward pass taken at the start of the sweep. Each update therefore
    costs one refresh instead of a fresh forward pass and backprojection.
    """

    def __init__(self, net: Network, batch: Batch, layers: Sequence[int]):
        self.net = net
        self.ascending = list(layers) == sorted(layers)
        first = layers[0]
        if self.ascending:
            self._states = None
            self._inputs = {first - 1: forward_pass(net, batch.X, upto=first - 1)[-1].activation}
            self._targets = {net.n_layers: batch.Y}
            for r in range(net.n_layers - 1, first - 1, -1):
                self._targets[r] = backproject_step(net.layer(r + 1), self._targets[r + 1])
        else:
            self._states = forward_pass(net, batch.X, upto=first)
            self._targets = {first: backproject_labels(net, batch.Y, downto=first)}

    def problem(self, m: int) -> LayerProblem:
        if self._states is not None:
            below, state = self._states[m - 1], self._states[m]
            return LayerProblem(below.activation, state.pre_activation, state.activation, self._targets[m])
        layer = self.net.layers[m - 1]
        inputs = self._inputs[m - 1]
        Z = layer.weights.T @ inputs
        return LayerProblem(inputs, Z, act_forward(layer.spec.activation, Z), self._targets[m])

    def refresh(self, m: int) -> None:
        """Bring the quantity the next layer reads up to date after U_m changed."""
        layer = self.net.layers[m - 1]
        if self.ascending and m < self.net.n_layers:
            self._inputs[m] = act_forward(layer.spec.activation, layer.weights.T @ self._inputs[m - 1])
        elif not self.ascending and m > 1:
            self._targets[m - 1] = backproject_step(layer, self._targets[m])


def _step_layer(
    layer: Layer, problem: LayerProblem, step: float, with_loss: bool = True
) -> tuple[np.ndarray, Optional[float]]:
    spec = layer.spec
    loss = loss_value(spec.loss, problem.activation, problem.targets) if with_loss else None
    scale, delta = _scaled_delta(spec, problem)
    layer.weights = layer.weights - (step * scale) * (problem.inputs @ delta.T)
    return layer.weights, loss


def update_layer_weights(net: Network, X: np.ndarray, Y: np.ndarray, m: int, learning_rate: float) -> np.ndarray:
    """One gradient step U_m <- U_m - eta dL_m/dU_m; every other layer is left untouched."""
    updated, _ = _step_layer(net.layer(m), layer_problem(net, Batch(X, Y), m), learning_rate, with_loss=False)
    return updated


def layer_order(procedure: Procedure | str, n_layers: int, batch_index: int) -> list[int]:
    """Layers to update for a batch; forward_backward goes forward on odd batches."""
    forward = list(range(1, n_layers + 1))
    procedure = Procedure(procedure)
    if procedure is Procedure.FORWARD:
        return forward
    if procedure is Procedure.BACKWARD:
        return forward[::-1]
    return forward if batch_index % 2 == 1 else forward[::-1]


def train_backprojection(
    net: Network,
    data: Batch,
    config: TrainConfig,
    trace: Optional[list[UpdateRecord]] = None,
) -> TrainReport:
    """
    Train `net` in place with backprojection.

    Every layer is updated once per batch in the order the procedure
    dictates, each update seeing the weights changed earlier in the sweep.
    The step applied to the summed layer gradient is `config.step_size(b)`.
    When `trace` is given, one UpdateRecord per layer update is appended;
    layer losses are only evaluated in that case.
    """
    logger.info(
        f"Backprojection ({config.procedure.value}): {net.n_layers} layers, "
        f"n={data.size}, b={config.batch_size}, epochs={config.epochs}, "
        f"eta={config.learning_rate} ({config.batch_reduction.value})"
    )
    with_loss = trace is not None
    # indexed by batch parity
    orders = (layer_order(config.procedure, net.n_layers, 2), layer_order(config.procedure, net.n_layers, 1))

    def step(net: Network, batch: Batch, epoch: int, batch_index: int) -> None:
        layers = orders[batch_index % 2]
        eta = config.step_size(batch.size)
        m = layers[0]
        try:
            sweep = LayerSweep(net, batch, layers)
            for m in layers:
                updated, loss = _step_layer(net.layers[m - 1], sweep.problem(m), eta, with_loss)
                check_finite(updated, "layer weights", epoch, batch_index, m)
                if with_loss:
                    check_finite(np.asarray(loss), "layer loss", epoch, batch_index, m)
                    trace.append(UpdateRecord(epoch=epoch, batch=batch_index, layer=m, loss=loss))
                sweep.refresh(m)
        except (ActivationDomainError, LossDomainError) as e:
            raise TrainingAbortedError(str(e), epoch, batch_index, m) from e

    report = run_epochs(net, data, config, step)
    logger.info(f"Backprojection finished with training accuracy {report.final_accuracy:.3f}")
    return report
