# app/data.py

"""
Synthetic blob datasets, standardization and label encoding.

Samples are stored column-wise (X is d x n) to match the network code.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from app.errors import DatasetError
from app.nn.activations import ActivationKind

logger = logging.getLogger(__name__)

# --- DEFAULT EXPERIMENT DATASETS ---
TWO_BLOBS = {
    "n_per_class": [150, 150],
    "means": [[-2.0, 0.0], [2.0, 0.0]],
    "variances": [1.0, 2.5],
}
THREE_BLOBS = {
    "n_per_class": [100, 100, 100],
    "means": [[-2.0, -1.0], [2.0, -1.0], [0.0, 2.0]],
    "variances": [0.7, 1.5, 2.5],
}


@dataclass
class Dataset:
    X: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.X.ndim != 2 or self.X.shape[1] != self.labels.shape[0]:
            raise DatasetError(
                f"X has shape {self.X.shape} but there are {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DatasetError(f"labels must lie in [0, {self.n_classes})")
        if self.n < self.n_classes:
            raise DatasetError(f"{self.n} samples cannot cover {self.n_classes} classes")

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def dim(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class Standardization:
    """Per-row mean and population std used to standardize a data matrix."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean[:, None]) / self.std[:, None]


def generate_blobs(
    n_per_class: Sequence[int],
    means: Sequence[Sequence[float]],
    variances: Sequence[float],
    seed: int,
) -> Dataset:
    """Isotropic Gaussian blobs, one per class, concatenated class by class."""
    if not (len(n_per_class) == len(means) == len(variances)):
        raise DatasetError(
            f"blob parameters differ in length: {len(n_per_class)} counts, "
            f"{len(means)} means, {len(variances)} variances"
        )
    if any(v <= 0 for v in variances):
        raise DatasetError(f"blob variances must be positive, got {list(variances)}")
    if any(count < 1 for count in n_per_class):
        raise DatasetError(f"every class needs at least one sample, got {list(n_per_class)}")
    dims = {len(mean) for mean in means}
    if len(dims) != 1:
        raise DatasetError("all blob means must share one dimensionality")

    rng = np.random.default_rng(seed)
    columns, labels = [], []
    for label, (count, mean, variance) in enumerate(zip(n_per_class, means, variances)):
        mean = np.asarray(mean, dtype=float)
        samples = mean[:, None] + np.sqrt(variance) * rng.standard_normal((mean.size, count))
        columns.append(samples)
        labels.append(np.full(count, label))
    return Dataset(np.hstack(columns), np.concatenate(labels), n_classes=len(n_per_class))


def two_blobs(seed: int = 0) -> Dataset:
    return generate_blobs(seed=seed, **TWO_BLOBS)


def three_blobs(seed: int = 0) -> Dataset:
    return generate_blobs(seed=seed, **THREE_BLOBS)


def standardize(X: np.ndarray) -> tuple[np.ndarray, Standardization]:
    """Shift and scale every row to mean 0 and population std 1."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=1)
    std = X.std(axis=1)
    constant = np.flatnonzero(std == 0)
    if constant.size:
        raise DatasetError(f"row {int(constant[0])} has zero variance and cannot be standardized")
    stats = Standardization(mean=mean, std=std)
    return stats.apply(X), stats


def encode_labels(
    labels: np.ndarray, n_classes: int, last_activation: ActivationKind | str
) -> np.ndarray:
    """
    Encode class indices as a p x n target matrix.

    Three or more classes are one-hot. Two classes become scalar targets
    (p = 1): {-1, 1} under tanh and {0, 1} otherwise.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DatasetError(f"labels must lie in [0, {n_classes})")
    if n_classes == 2:
        targets = labels.astype(float)
        if ActivationKind(last_activation) is ActivationKind.TANH:
            targets = 2.0 * targets - 1.0
        return targets[None, :]
    one_hot = np.zeros((n_classes, labels.size))
    one_hot[labels, np.arange(labels.size)] = 1.0
    return one_hot


def decode_labels(targets: np.ndarray) -> np.ndarray:
    """Class indices back from encoded targets; positive scalar targets are class 1."""
    targets = np.asarray(targets, dtype=float)
    if targets.shape[0] == 1:
        return (targets[0] > 0).astype(int)
    return np.argmax(targets, axis=0).astype(int)


def output_dim(n_classes: int) -> int:
    return 1 if n_classes == 2 else n_classes


def save_dataset(dataset: Dataset, path: Path) -> None:
    """Write columns x1..xd plus label, with a header row."""
    frame = pd.DataFrame(dataset.X.T, columns=[f"x{j + 1}" for j in range(dataset.dim)])
    frame["label"] = dataset.labels
    frame.to_csv(path, index=False, encoding="utf-8")
    logger.info(f"Saved {dataset.n} samples to {path}")


def load_dataset(path: Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    frame = pd.read_csv(path, encoding="utf-8")
    if "label" not in frame.columns:
        raise DatasetError(f"{path} has no 'label' column")
    feature_columns = [column for column in frame.columns if column != "label"]
    if not feature_columns:
        raise DatasetError(f"{path} has no feature columns")
    labels = frame["label"].to_numpy(dtype=int)
    n_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(frame[feature_columns].to_numpy(dtype=float).T, labels, n_classes=n_classes)
