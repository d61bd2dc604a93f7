# app/nn/losses.py

"""
Loss functions and their gradients with respect to the activation output.

Arguments may be vectors or column-wise batch matrices. For a batch the loss
value is the sum of the per-sample losses, which is exactly the layer loss
L_m when `f` holds a layer's activations and `y` its backprojected targets.
"""

from enum import Enum

import numpy as np

from app.errors import LossDomainError


class LossKind(str, Enum):
    MSE = "mse"
    CROSS_ENTROPY = "cross_entropy"


def _validate(kind: LossKind, f: np.ndarray, y: np.ndarray) -> None:
    if f.shape != y.shape:
        raise LossDomainError(f"loss arguments differ in shape: f {f.shape} vs y {y.shape}")
    if kind is LossKind.CROSS_ENTROPY:
        positive = f > 0
        if not np.all(positive):
            index = np.unravel_index(np.argmin(positive), f.shape)
            raise LossDomainError(
                f"cross_entropy needs strictly positive activations; "
                f"got {f[index]!r} at index {tuple(int(i) for i in index)}"
            )


def loss_value(kind: LossKind | str, f: np.ndarray, y: np.ndarray) -> float:
    """mse: ||f - y||^2.  cross_entropy: -sum_j y_j ln f_j."""
    kind = LossKind(kind)
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    _validate(kind, f, y)
    if kind is LossKind.MSE:
        residual = f - y
        return float(np.sum(residual * residual))
    terms = np.where(y == 0, 0.0, y * np.log(f))
    return float(-np.sum(terms))


def loss_grad_wrt_activation(kind: LossKind | str, f: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the loss with respect to `f`, same shape as `f`."""
    kind = LossKind(kind)
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    _validate(kind, f, y)
    if kind is LossKind.MSE:
        return 2.0 * (f - y)
    # zero labels give exact zeros rather than -0/f
    return np.where(y == 0, 0.0, -y / f)
