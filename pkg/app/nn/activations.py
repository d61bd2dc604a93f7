# app/nn/activations.py

"""
Activation functions with their derivatives, inverses and feasible sets.

Every function here is elementwise and works on arrays of any shape. The
inverse is only defined on the activation's (open) feasible set, so label
backprojection always runs `project_feasible` before `act_inverse`.
"""

import logging
from enum import Enum

import numpy as np
from scipy.special import expit, logit

from app.errors import ActivationDomainError

logger = logging.getLogger(__name__)

# Margin used to shrink the open feasible set before inverting.
FEASIBILITY_MARGIN = 1e-6
# Inverse outputs are clamped to [-INVERSE_BOUND, INVERSE_BOUND].
INVERSE_BOUND = 1e3


class ActivationKind(str, Enum):
    ELU = "elu"
    LINEAR = "linear"
    SIGMOID = "sigmoid"
    TANH = "tanh"


# Open feasible interval (lower, upper) of each inverse.
_FEASIBLE_SETS = {
    ActivationKind.ELU: (-1.0, np.inf),
    ActivationKind.LINEAR: (-np.inf, np.inf),
    ActivationKind.SIGMOID: (0.0, 1.0),
    ActivationKind.TANH: (-1.0, 1.0),
}


def feasible_set(kind: ActivationKind | str) -> tuple[float, float]:
    """Return the open interval on which the inverse of `kind` is defined."""
    return _FEASIBLE_SETS[ActivationKind(kind)]


def act_forward(kind: ActivationKind | str, z: np.ndarray) -> np.ndarray:
    kind = ActivationKind(kind)
    z = np.asarray(z, dtype=float)
    if kind is ActivationKind.ELU:
        # expm1 of the clipped branch keeps the unused side from overflowing
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if kind is ActivationKind.LINEAR:
        return z.copy()
    if kind is ActivationKind.SIGMOID:
        return expit(z)
    return np.tanh(z)


def act_derivative(kind: ActivationKind | str, z: np.ndarray) -> np.ndarray:
    """
    Elementwise derivative f'(z).

    The ELU kink at z = 0 takes the right limit, so f'(0) = 1. The ELU
    branch is written as min(f(z) + 1, 1) so it matches
    `derivative_from_output` bit for bit.
    """
    kind = ActivationKind(kind)
    z = np.asarray(z, dtype=float)
    if kind is ActivationKind.ELU:
        return np.minimum(np.expm1(np.minimum(z, 0.0)) + 1.0, 1.0)
    if kind is ActivationKind.LINEAR:
        return np.ones_like(z)
    if kind is ActivationKind.SIGMOID:
        f = expit(z)
        return f * (1.0 - f)
    f = np.tanh(z)
    return 1.0 - f * f


def derivative_from_output(kind: ActivationKind | str, f: np.ndarray) -> np.ndarray:
    """
    f'(z) written in terms of the output f = f(z), for callers that already
    hold the activations. Equals `act_derivative(kind, z)` exactly when
    f = act_forward(kind, z), ELU kink included.
    """
    kind = ActivationKind(kind)
    if kind is ActivationKind.ELU:
        # f + 1 = e^z on the negative side and exceeds 1 elsewhere
        return np.minimum(f + 1.0, 1.0)
    if kind is ActivationKind.LINEAR:
        return np.ones_like(f)
    if kind is ActivationKind.SIGMOID:
        return f * (1.0 - f)
    return 1.0 - f * f


def _check_feasible(kind: ActivationKind, y: np.ndarray) -> None:
    lower, upper = _FEASIBLE_SETS[kind]
    inside = (y > lower) & (y < upper)
    if not np.all(inside):
        index = np.unravel_index(np.argmin(inside), y.shape)
        bound = f"({lower}, {upper})"
        raise ActivationDomainError(
            f"{kind.value} inverse undefined at index {tuple(int(i) for i in index)}: "
            f"value {y[index]!r} is outside the feasible set {bound}"
        )


def act_inverse(kind: ActivationKind | str, y: np.ndarray) -> np.ndarray:
    """
    Elementwise f^{-1}(y), clamped to [-INVERSE_BOUND, INVERSE_BOUND].

    Raises:
        ActivationDomainError: if any entry lies outside the feasible set.
    """
    kind = ActivationKind(kind)
    y = np.asarray(y, dtype=float)
    _check_feasible(kind, y)

    if kind is ActivationKind.ELU:
        z = np.where(y > 0, y, np.log1p(np.minimum(y, 0.0)))
    elif kind is ActivationKind.LINEAR:
        z = y.copy()
    elif kind is ActivationKind.SIGMOID:
        z = logit(y)
    else:
        z = np.arctanh(y)
    return np.clip(z, -INVERSE_BOUND, INVERSE_BOUND)


def project_feasible(kind: ActivationKind | str, y: np.ndarray) -> np.ndarray:
    """Clamp `y` into the feasible set shrunk by FEASIBILITY_MARGIN. Idempotent."""
    kind = ActivationKind(kind)
    y = np.asarray(y, dtype=float)
    if kind is ActivationKind.LINEAR:
        return y.copy()
    lower, upper = _FEASIBLE_SETS[kind]
    return np.clip(y, lower + FEASIBILITY_MARGIN, upper - FEASIBILITY_MARGIN)


def feasible_inverse(kind: ActivationKind | str, y: np.ndarray) -> np.ndarray:
    """
    act_inverse(kind, project_feasible(kind, y)) in one pass.

    The projection makes the domain check redundant, and on the shrunk sets
    the sigmoid and tanh inverses stay within about 14 of zero, so only ELU
    and linear need the INVERSE_BOUND clamp. This is the form used while
    training, once per backprojected layer.
    """
    kind = ActivationKind(kind)
    if kind is ActivationKind.ELU:
        y = np.maximum(y, -1.0 + FEASIBILITY_MARGIN)
        return np.where(y > 0, np.minimum(y, INVERSE_BOUND), np.log1p(np.minimum(y, 0.0)))
    if kind is ActivationKind.LINEAR:
        return np.minimum(np.maximum(y, -INVERSE_BOUND), INVERSE_BOUND)
    lower, upper = _FEASIBLE_SETS[kind]
    y = np.minimum(np.maximum(y, lower + FEASIBILITY_MARGIN), upper - FEASIBILITY_MARGIN)
    return logit(y) if kind is ActivationKind.SIGMOID else np.arctanh(y)
