# tests/test_backprojection.py

import numpy as np
import pytest

from app.errors import ConfigError, TrainingAbortedError
from app.nn.network import Batch, Layer, LayerSpec, Network
from app.training import backprojection
from app.training.backprojection import (
    finite_difference_gradient,
    layer_gradient,
    layer_gradient_kronecker,
    layer_order,
    train_backprojection,
    update_layer_weights,
)
from app.training.backpropagation import network_objective
from app.training.gradcheck import random_instance, relative_error
from app.training.loop import TrainConfig, UpdateRecord


@pytest.fixture
def hand_case():
    """One linear identity layer, x = (1, 0), y = (0, 0)."""
    net = Network([Layer(LayerSpec(in_dim=2, out_dim=2, activation="linear"), np.eye(2))])
    return net, Batch(np.array([[1.0], [0.0]]), np.array([[0.0], [0.0]]))


@pytest.fixture
def blob_batch():
    rng = np.random.default_rng(0)
    X = np.hstack([rng.normal(-1.5, 1.0, size=(2, 20)), rng.normal(1.5, 1.0, size=(2, 20))])
    Y = np.concatenate([np.zeros(20), np.ones(20)])[None, :]
    return Batch(X, Y)


def small_net(seed=0):
    return Network.from_dims([2, 4, 3, 1], ["elu", "tanh", "sigmoid"], ["mse"] * 3, seed=seed)


def test_hand_gradient(hand_case):
    net, batch = hand_case

    np.testing.assert_allclose(layer_gradient(net, batch, 1), [[2.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(finite_difference_gradient(net, batch, 1), [[2.0, 0.0], [0.0, 0.0]], atol=1e-8)


def test_zero_residual_gives_zero_gradient():
    net = Network([Layer(LayerSpec(in_dim=2, out_dim=2, activation="linear"), np.eye(2))])
    X = np.random.default_rng(1).normal(size=(2, 3))
    batch = Batch(X, X.copy())

    np.testing.assert_array_equal(layer_gradient(net, batch, 1), np.zeros((2, 2)))
    np.testing.assert_allclose(finite_difference_gradient(net, batch, 1), np.zeros((2, 2)), atol=1e-9)


def test_one_descent_step(hand_case):
    net, batch = hand_case

    updated = update_layer_weights(net, batch.X, batch.Y, 1, learning_rate=0.1)

    np.testing.assert_allclose(updated, [[0.8, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(net.weights(1), updated)


def test_zero_step_leaves_weights_unchanged(blob_batch):
    net = small_net()
    before = net.weights(2).copy()

    update_layer_weights(net, blob_batch.X, blob_batch.Y, 2, learning_rate=0.0)

    np.testing.assert_array_equal(net.weights(2), before)


def test_update_touches_only_the_target_layer(blob_batch):
    net = small_net()
    before = [net.weights(m).copy() for m in (1, 2, 3)]

    update_layer_weights(net, blob_batch.X, blob_batch.Y, 2, learning_rate=0.05)

    np.testing.assert_array_equal(net.weights(1), before[0])
    np.testing.assert_array_equal(net.weights(3), before[2])
    assert not np.array_equal(net.weights(2), before[1])


def test_gradient_matches_finite_differences_on_random_net():
    rng = np.random.default_rng(12)
    for _ in range(10):
        net, batch = random_instance(rng, [2, 3, 2], ["elu", "sigmoid"], ["mse", "mse"], batch_size=4)
        for m in (1, 2):
            assert relative_error(layer_gradient(net, batch, m), finite_difference_gradient(net, batch, m)) < 1e-5


def test_kronecker_form_matches_outer_product_form():
    rng = np.random.default_rng(21)
    kinds = ["elu", "linear", "sigmoid", "tanh"]
    for trial in range(50):
        activations = [kinds[trial % 4], kinds[(trial // 4) % 4]]
        dims = list(rng.integers(1, 5, size=3))
        net, batch = random_instance(rng, dims, activations, ["mse", "mse"], batch_size=int(rng.integers(1, 6)))
        for m in (1, 2):
            np.testing.assert_allclose(
                layer_gradient_kronecker(net, batch, m), layer_gradient(net, batch, m), rtol=1e-12, atol=1e-12
            )


@pytest.mark.parametrize(
    "procedure, expected",
    [
        ("forward", [1, 2, 3, 1, 2, 3]),
        ("backward", [3, 2, 1, 3, 2, 1]),
        ("forward_backward", [1, 2, 3, 3, 2, 1]),
    ],
)
def test_procedures_visit_each_layer_once_per_batch(procedure, expected):
    net = small_net()
    rng = np.random.default_rng(5)
    data = Batch(rng.normal(size=(2, 8)), rng.integers(0, 2, size=(1, 8)).astype(float))
    trace: list[UpdateRecord] = []

    train_backprojection(net, data, TrainConfig(procedure=procedure, batch_size=4, epochs=1), trace=trace)

    assert [record.layer for record in trace] == expected
    assert [record.batch for record in trace] == [1, 1, 1, 2, 2, 2]


def test_every_update_goes_through_the_layer_step(mocker, blob_batch):
    spy = mocker.spy(backprojection, "_step_layer")

    train_backprojection(small_net(), blob_batch, TrainConfig(batch_size=15, epochs=2))

    # 2 epochs x ceil(40/15) batches x 3 layers
    assert spy.call_count == 2 * 3 * 3


def test_layer_order_helper():
    assert layer_order("forward_backward", 3, batch_index=1) == [1, 2, 3]
    assert layer_order("forward_backward", 3, batch_index=2) == [3, 2, 1]


def test_zero_epochs_leaves_network_unchanged(blob_batch):
    net = small_net()
    before = [net.weights(m).copy() for m in (1, 2, 3)]

    report = train_backprojection(net, blob_batch, TrainConfig(epochs=0))

    assert report.epoch_losses == [] and report.epoch_seconds == []
    for m in (1, 2, 3):
        np.testing.assert_array_equal(net.weights(m), before[m - 1])


def test_training_is_deterministic(blob_batch):
    config = TrainConfig(procedure="forward_backward", learning_rate=1e-2, batch_size=8, epochs=5, seed=3)

    first = train_backprojection(small_net(seed=1), blob_batch, config)
    second = train_backprojection(small_net(seed=1), blob_batch, config)

    assert first.epoch_losses == second.epoch_losses
    assert len(first.epoch_seconds) == 5


def test_training_reduces_loss(blob_batch):
    report = train_backprojection(small_net(), blob_batch, TrainConfig(learning_rate=8e-2, batch_size=8, epochs=30))

    assert report.epoch_losses[-1] < report.epoch_losses[0]


def test_divergence_aborts_with_location(blob_batch):
    net = Network.from_dims([2, 3, 1], ["linear", "linear"], ["mse", "mse"], seed=0)

    with pytest.raises(TrainingAbortedError) as excinfo:
        train_backprojection(net, blob_batch, TrainConfig(learning_rate=1e30, batch_size=1, epochs=5))

    assert excinfo.value.epoch == 1
    assert excinfo.value.layer in (1, 2)


def test_batch_larger_than_dataset_is_rejected(blob_batch):
    with pytest.raises(ConfigError):
        train_backprojection(small_net(), blob_batch, TrainConfig(batch_size=41, epochs=1))


@pytest.mark.parametrize("procedure, layers", [("forward", [1, 2, 3]), ("backward", [3, 2, 1])])
@pytest.mark.parametrize("reduction, eta", [("sum", 5e-2), ("mean", 5e-2 / 40)])
def test_cached_sweep_matches_fresh_recomputation(blob_batch, procedure, layers, reduction, eta):
    swept = small_net(seed=6)
    fresh = swept.copy()
    config = TrainConfig(
        procedure=procedure, learning_rate=5e-2, batch_reduction=reduction,
        batch_size=blob_batch.size, epochs=1, shuffle=False,
    )

    train_backprojection(swept, blob_batch, config)
    for m in layers:
        update_layer_weights(fresh, blob_batch.X, blob_batch.Y, m, learning_rate=eta)

    for m in layers:
        np.testing.assert_allclose(swept.weights(m), fresh.weights(m), rtol=1e-12, atol=1e-15)


def test_layer_loss_hand_case(hand_case):
    net, batch = hand_case

    assert backprojection.layer_loss(net, batch, 1) == pytest.approx(1.0)


def test_last_layer_loss_is_the_network_objective(blob_batch):
    net = small_net(seed=2)

    assert backprojection.layer_loss(net, blob_batch, 3) == pytest.approx(network_objective(net, blob_batch), rel=1e-12)


def test_mean_reduction_divides_the_step_by_the_batch_size(blob_batch):
    mean_net, sum_net = small_net(seed=4), small_net(seed=4)
    common = {"procedure": "backward", "batch_size": blob_batch.size, "epochs": 1, "shuffle": False}

    train_backprojection(mean_net, blob_batch, TrainConfig(learning_rate=0.4, batch_reduction="mean", **common))
    train_backprojection(sum_net, blob_batch, TrainConfig(learning_rate=0.01, batch_reduction="sum", **common))

    for m in (1, 2, 3):
        np.testing.assert_allclose(mean_net.weights(m), sum_net.weights(m), rtol=1e-12, atol=1e-15)


def test_default_config_sweeps_backward_with_mean_steps():
    config = TrainConfig()

    assert config.procedure.value == "backward"
    assert config.step_size(30) == pytest.approx(1e-4 / 30)
    assert TrainConfig(batch_reduction="sum").step_size(30) == 1e-4


def test_cross_entropy_layers_step_like_the_outer_product_gradient():
    rng = np.random.default_rng(8)
    net, batch = random_instance(rng, [3, 4, 2], ["tanh", "sigmoid"], ["mse", "cross_entropy"], batch_size=5)
    expected = net.weights(2) - 0.3 * layer_gradient(net, batch, 2)

    updated = update_layer_weights(net, batch.X, batch.Y, 2, learning_rate=0.3)

    np.testing.assert_allclose(updated, expected, rtol=1e-12, atol=1e-15)


def test_non_finite_epoch_loss_blames_no_batch(mocker, blob_batch):
    mocker.patch("app.training.loop.network_loss", return_value=float("inf"))

    with pytest.raises(TrainingAbortedError) as excinfo:
        train_backprojection(small_net(), blob_batch, TrainConfig(batch_size=20, epochs=3))

    assert excinfo.value.epoch == 1
    assert excinfo.value.batch is None and excinfo.value.layer is None
    assert "batch" not in str(excinfo.value)
