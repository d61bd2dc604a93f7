# tests/test_backpropagation.py

import itertools

import numpy as np
import pytest

from app.nn.network import Batch, Layer, LayerSpec, Network
from app.training.backprojection import train_backprojection
from app.training.backpropagation import (
    BACKPROJECTION,
    BACKPROPAGATION,
    KERNEL_BACKPROJECTION,
    backprop_gradients,
    epoch_timing_comparison,
    finite_difference_network_gradients,
    train_backpropagation,
)
from app.training.gradcheck import random_instance, relative_error
from app.training.loop import TrainConfig


@pytest.fixture
def blob_batch():
    """Two well separated 2-D clusters with 0/1 targets."""
    rng = np.random.default_rng(4)
    X = np.hstack([rng.normal(-2.0, 1.0, size=(2, 15)), rng.normal(2.0, 1.0, size=(2, 15))])
    Y = np.concatenate([np.zeros(15), np.ones(15)])[None, :]
    return Batch(X, Y)


def test_hand_gradient_for_single_linear_layer():
    net = Network([Layer(LayerSpec(in_dim=2, out_dim=2, activation="linear"), np.eye(2))])
    batch = Batch(np.array([[1.0], [0.0]]), np.array([[0.0], [0.0]]))

    (gradient,) = backprop_gradients(net, batch)

    np.testing.assert_allclose(gradient, [[2.0, 0.0], [0.0, 0.0]])


def test_gradients_match_finite_differences_on_every_layer():
    rng = np.random.default_rng(8)
    for _ in range(10):
        net, batch = random_instance(rng, [3, 4, 3, 2], ["tanh", "elu", "sigmoid"], ["mse"] * 3, batch_size=5)
        analytic = backprop_gradients(net, batch)
        numeric = finite_difference_network_gradients(net, batch)
        assert len(analytic) == 3
        for a, b in zip(analytic, numeric):
            assert relative_error(a, b) < 1e-5


def test_cross_entropy_output_gradients():
    rng = np.random.default_rng(9)
    net, batch = random_instance(rng, [2, 3, 2], ["sigmoid", "sigmoid"], ["mse", "cross_entropy"], batch_size=4)

    for a, b in zip(backprop_gradients(net, batch), finite_difference_network_gradients(net, batch)):
        assert relative_error(a, b) < 1e-5


def test_finite_difference_rejects_nonpositive_step():
    net = Network.from_dims([2, 1], ["linear"], ["mse"], seed=0)
    with pytest.raises(ValueError):
        finite_difference_network_gradients(net, Batch(np.ones((2, 1)), np.ones((1, 1))), h=0.0)


def test_zero_epochs_leaves_network_unchanged(blob_batch):
    net = Network.from_dims([2, 5, 1], ["elu", "sigmoid"], ["mse", "mse"], seed=2)
    before = [net.weights(m).copy() for m in (1, 2)]

    report = train_backpropagation(net, blob_batch, TrainConfig(epochs=0))

    assert report.epoch_losses == []
    for m in (1, 2):
        np.testing.assert_array_equal(net.weights(m), before[m - 1])


@pytest.mark.parametrize("activation", ["sigmoid", "elu", "tanh", "linear"])
@pytest.mark.parametrize("reduction", ["mean", "sum"])
def test_single_layer_trajectory_matches_backprojection(blob_batch, activation, reduction):
    config = TrainConfig(learning_rate=1e-3, batch_reduction=reduction, batch_size=7, epochs=10, seed=11)
    projected = Network.from_dims([2, 1], [activation], ["mse"], seed=5)
    propagated = projected.copy()

    first = train_backprojection(projected, blob_batch, config)
    second = train_backpropagation(propagated, blob_batch, config)

    np.testing.assert_array_equal(projected.weights(1), propagated.weights(1))
    assert first.epoch_losses == second.epoch_losses


def test_backpropagation_learns_separable_blobs(blob_batch):
    net = Network.from_dims([2, 6, 1], ["elu", "sigmoid"], ["mse", "mse"], seed=0)

    report = train_backpropagation(net, blob_batch, TrainConfig(learning_rate=0.25, batch_size=5, epochs=40))

    assert report.epoch_losses[-1] < report.epoch_losses[0]
    assert report.final_accuracy >= 0.9


def test_timing_table_with_fixed_clock(mocker, blob_batch):
    # each epoch reads the clock twice, one tick apart
    mocker.patch("app.training.loop.time.perf_counter", side_effect=itertools.count())
    arch = [
        LayerSpec(in_dim=2, out_dim=4, activation="elu"),
        LayerSpec(in_dim=4, out_dim=1, activation="sigmoid"),
    ]

    table = epoch_timing_comparison(
        arch, blob_batch, TrainConfig(learning_rate=1e-3, batch_size=10), warmup_epochs=1, timed_epochs=3
    )

    assert set(table.timings) == {BACKPROJECTION, KERNEL_BACKPROJECTION, BACKPROPAGATION}
    for timing in table.timings.values():
        assert timing.mean_epoch_seconds == 1.0
        assert timing.std == 0.0
    assert table.backprojection_to_backpropagation == 1.0
    assert (table.warmup_epochs, table.timed_epochs) == (1, 3)
    assert table.procedure.value == "backward"
