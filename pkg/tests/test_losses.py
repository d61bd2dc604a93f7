# tests/test_losses.py

import numpy as np
import pytest

from app.errors import LossDomainError
from app.nn.losses import LossKind, loss_grad_wrt_activation, loss_value


def test_mse_examples():
    assert loss_value("mse", np.array([0.3, 0.7]), np.array([0.3, 0.7])) == 0.0
    assert loss_value("mse", np.array([1.0, 0.0]), np.array([0.0, 0.0])) == pytest.approx(1.0)
    np.testing.assert_array_equal(
        loss_grad_wrt_activation("mse", np.array([1.0, 0.0]), np.array([0.0, 0.0])), [2.0, 0.0]
    )


def test_cross_entropy_examples():
    f, y = np.array([0.5, 0.5]), np.array([1.0, 0.0])

    assert loss_value("cross_entropy", f, y) == pytest.approx(np.log(2))
    np.testing.assert_allclose(loss_grad_wrt_activation("cross_entropy", f, y), [-2.0, 0.0])


def test_cross_entropy_gradient_is_exactly_zero_for_zero_labels():
    grad = loss_grad_wrt_activation("cross_entropy", np.array([0.2, 0.8]), np.array([0.0, 1.0]))

    assert grad[0] == 0.0
    assert not np.signbit(grad[0])


def test_batch_loss_sums_columns():
    f = np.array([[1.0, 0.0], [0.0, 2.0]])
    y = np.zeros((2, 2))

    assert loss_value(LossKind.MSE, f, y) == pytest.approx(5.0)


@pytest.mark.parametrize("kind", list(LossKind))
def test_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(7)
    for _ in range(20):
        f = rng.uniform(0.2, 1.0, size=5)
        y = rng.uniform(0.0, 1.0, size=5)
        h = 1e-6
        numeric = np.array([
            (loss_value(kind, f + h * e, y) - loss_value(kind, f - h * e, y)) / (2 * h)
            for e in np.eye(5)
        ])

        np.testing.assert_allclose(loss_grad_wrt_activation(kind, f, y), numeric, atol=1e-6)


def test_mse_is_nonnegative_and_zero_only_at_equality():
    rng = np.random.default_rng(3)
    f, y = rng.normal(size=(3, 10)), rng.normal(size=(3, 10))

    assert loss_value("mse", f, y) > 0
    assert loss_value("mse", f, f) == 0


def test_dimension_mismatch_is_rejected():
    with pytest.raises(LossDomainError, match="shape"):
        loss_value("mse", np.zeros(2), np.zeros(3))


def test_cross_entropy_rejects_nonpositive_activation():
    with pytest.raises(LossDomainError, match="positive"):
        loss_grad_wrt_activation("cross_entropy", np.array([0.5, 0.0]), np.array([1.0, 0.0]))
