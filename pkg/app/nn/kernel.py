# app/nn/kernel.py

"""
Kernel construction and normalization for kernel backprojection.

In kernel mode each sample x_i is replaced by its normalized kernel column
k_i, so the network input dimension becomes n and the first layer's weights
are the coefficient matrix Theta (n x d_1). The feature map itself is never
materialized.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial.distance import cdist

from app.errors import KernelError

logger = logging.getLogger(__name__)


class KernelName(str, Enum):
    LINEAR = "linear"
    RBF = "rbf"


class KernelKind(BaseModel):
    name: KernelName
    gamma: Optional[float] = Field(default=None, gt=0)

    def resolved_gamma(self, dim: int) -> float:
        """RBF bandwidth, defaulting to 1/d for standardized data."""
        return self.gamma if self.gamma is not None else 1.0 / dim


def kernel_matrix(kind: KernelKind, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Kernel between the columns of A (d x n1) and B (d x n2), shape n1 x n2."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[0]:
        raise KernelError(f"kernel inputs need the same row count: {A.shape} vs {B.shape}")
    if kind.name is KernelName.LINEAR:
        return A.T @ B
    gamma = kind.resolved_gamma(A.shape[0])
    return np.exp(-gamma * cdist(A.T, B.T, metric="sqeuclidean"))


def normalize_kernel(K: np.ndarray) -> np.ndarray:
    """K(i,j) / sqrt(K(i,i) K(j,j)), with the diagonal set to exactly 1."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise KernelError(f"kernel must be square, got {K.shape}")
    diagonal = np.diag(K)
    bad = np.flatnonzero(~(diagonal > 0))
    if bad.size:
        i = int(bad[0])
        raise KernelError(f"kernel diagonal entry {i} is {diagonal[i]!r}; it must be positive")
    scale = np.sqrt(diagonal)
    normalized = K / np.outer(scale, scale)
    np.fill_diagonal(normalized, 1.0)
    return normalized


@dataclass(frozen=True)
class KernelModel:
    """Training snapshot backing kernel backprojection. Immutable once built."""

    train_X: np.ndarray
    kind: KernelKind
    K_normalized: np.ndarray
    train_diagonal: np.ndarray

    @property
    def n(self) -> int:
        return self.train_X.shape[1]

    @property
    def input_dim(self) -> int:
        return self.train_X.shape[0]


def build_kernel_model(kind: KernelKind, train_X: np.ndarray) -> KernelModel:
    train_X = np.array(train_X, dtype=float)
    if train_X.ndim != 2 or train_X.shape[1] < 1:
        raise KernelError(f"training matrix must be d x n with n >= 1, got {train_X.shape}")
    if kind.name is KernelName.RBF:
        kind = KernelKind(name=kind.name, gamma=kind.resolved_gamma(train_X.shape[0]))
    raw = kernel_matrix(kind, train_X, train_X)
    normalized = normalize_kernel(raw)
    logger.info(f"Built {kind.name.value} kernel model over {train_X.shape[1]} training points")
    train_X.setflags(write=False)
    normalized.setflags(write=False)
    diagonal = np.diag(raw).copy()
    diagonal.setflags(write=False)
    return KernelModel(train_X=train_X, kind=kind, K_normalized=normalized, train_diagonal=diagonal)


def test_kernel_vector(model: KernelModel, x_t: np.ndarray) -> np.ndarray:
    """
    Normalized train-vs-test kernel vector k_t (length n) for one test point.

    Builds the (n+1) x (n+1) kernel over [train_X, x_t], normalizes it and
    reads the first n entries of the last column.
    """
    x_t = np.asarray(x_t, dtype=float).reshape(-1)
    if x_t.shape[0] != model.input_dim:
        raise KernelError(f"test point has dimension {x_t.shape[0]}, expected {model.input_dim}")
    joint = np.hstack([model.train_X, x_t[:, None]])
    normalized = normalize_kernel(kernel_matrix(model.kind, joint, joint))
    return normalized[:-1, -1]


# pytest would otherwise collect the function above as a test
test_kernel_vector.__test__ = False


def _self_similarity(kind: KernelKind, X: np.ndarray) -> np.ndarray:
    """k(x, x) for every column of X."""
    if kind.name is KernelName.LINEAR:
        return np.sum(X * X, axis=0)
    return np.ones(X.shape[1])


def test_kernel_vectors(model: KernelModel, X_t: np.ndarray) -> np.ndarray:
    """
    Kernel vectors for every column of X_t, shape n x n_test.

    Matches `test_kernel_vector` per column up to rounding, but reuses the
    training diagonal instead of rebuilding the joint kernel.
    """
    X_t = np.asarray(X_t, dtype=float)
    if X_t.ndim != 2 or X_t.shape[0] != model.input_dim:
        raise KernelError(f"test matrix has shape {X_t.shape}, expected {model.input_dim} rows")
    cross = kernel_matrix(model.kind, model.train_X, X_t)
    test_diagonal = _self_similarity(model.kind, X_t)
    bad = np.flatnonzero(~(test_diagonal > 0))
    if bad.size:
        i = int(bad[0])
        raise KernelError(f"test point {i} has self-similarity {test_diagonal[i]!r}; it must be positive")
    return cross / np.outer(np.sqrt(model.train_diagonal), np.sqrt(test_diagonal))


test_kernel_vectors.__test__ = False
