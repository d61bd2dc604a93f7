# app/nn/network.py

"""
Layer stack of a bias-free feedforward network.

Layer m holds a weight matrix U_m of shape (d_{m-1}, d_m) and projects a
column-wise batch as Z = U_m^T X. Layers are addressed 1-based, as in the
training algorithms; index 0 refers to the raw input.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.errors import ShapeMismatchError
from app.nn.activations import ActivationKind, act_forward, feasible_inverse
from app.nn.losses import LossKind

logger = logging.getLogger(__name__)


class LayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    in_dim: int = Field(gt=0)
    out_dim: int = Field(gt=0)
    activation: ActivationKind
    loss: LossKind = LossKind.MSE


@dataclass
class Layer:
    spec: LayerSpec
    weights: np.ndarray


@dataclass
class Batch:
    """Column-wise samples X (d x b) and their encoded labels Y (p x b)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise ShapeMismatchError("batch matrices must be two-dimensional")
        if self.X.shape[1] != self.Y.shape[1] or self.X.shape[1] < 1:
            raise ShapeMismatchError(
                f"batch needs matching, nonzero column counts: X {self.X.shape}, Y {self.Y.shape}"
            )

    @property
    def size(self) -> int:
        return self.X.shape[1]

    def columns(self, index: np.ndarray) -> "Batch":
        return Batch(self.X[:, index], self.Y[:, index])


class LayerState(NamedTuple):
    """Pre-activation Z^{(r)} (None for the input) and activation X^{(r)}."""

    pre_activation: Optional[np.ndarray]
    activation: np.ndarray


class LayerRecord(BaseModel):
    in_dim: int
    out_dim: int
    activation: ActivationKind
    loss: LossKind
    weights: list[list[float]]


class NetworkDocument(BaseModel):
    layers: list[LayerRecord]


class Network:
    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ShapeMismatchError("a network needs at least one layer")
        for m, layer in enumerate(layers, start=1):
            expected = (layer.spec.in_dim, layer.spec.out_dim)
            if layer.weights.shape != expected:
                raise ShapeMismatchError(
                    f"layer {m} weights have shape {layer.weights.shape}, expected {expected}"
                )
            if m > 1 and layer.spec.in_dim != layers[m - 2].spec.out_dim:
                raise ShapeMismatchError(
                    f"layer {m} in_dim {layer.spec.in_dim} does not match "
                    f"layer {m - 1} out_dim {layers[m - 2].spec.out_dim}"
                )
        self.layers = list(layers)

    @classmethod
    def initialize(cls, specs: Sequence[LayerSpec], seed: int) -> "Network":
        """Draw every U_m i.i.d. from N(0, 1/d_{m-1}) with a seeded generator."""
        rng = np.random.default_rng(seed)
        layers = [
            Layer(spec, rng.normal(0.0, 1.0 / np.sqrt(spec.in_dim), size=(spec.in_dim, spec.out_dim)))
            for spec in specs
        ]
        return cls(layers)

    @classmethod
    def from_dims(
        cls,
        dims: Sequence[int],
        activations: Sequence[ActivationKind | str],
        losses: Sequence[LossKind | str],
        seed: int,
    ) -> "Network":
        """Build from dims [d_0, d_1, ..., d_L] and one activation/loss per layer."""
        specs = [
            LayerSpec(in_dim=dims[m], out_dim=dims[m + 1], activation=activations[m], loss=losses[m])
            for m in range(len(dims) - 1)
        ]
        return cls.initialize(specs, seed)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].spec.in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].spec.out_dim

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    def layer(self, m: int) -> Layer:
        if not 1 <= m <= self.n_layers:
            raise IndexError(f"layer index {m} outside 1..{self.n_layers}")
        return self.layers[m - 1]

    def weights(self, m: int) -> np.ndarray:
        return self.layer(m).weights

    def set_weights(self, m: int, weights: np.ndarray) -> None:
        layer = self.layer(m)
        if weights.shape != layer.weights.shape:
            raise ShapeMismatchError(
                f"layer {m} weights have shape {layer.weights.shape}, got {weights.shape}"
            )
        layer.weights = weights

    def copy(self) -> "Network":
        return Network([Layer(layer.spec, layer.weights.copy()) for layer in self.layers])

    def to_document(self) -> NetworkDocument:
        return NetworkDocument(
            layers=[
                LayerRecord(
                    in_dim=layer.spec.in_dim,
                    out_dim=layer.spec.out_dim,
                    activation=layer.spec.activation,
                    loss=layer.spec.loss,
                    weights=layer.weights.tolist(),
                )
                for layer in self.layers
            ]
        )

    @classmethod
    def from_document(cls, document: NetworkDocument) -> "Network":
        layers = []
        for record in document.layers:
            spec = LayerSpec(
                in_dim=record.in_dim, out_dim=record.out_dim,
                activation=record.activation, loss=record.loss,
            )
            weights = np.array(record.weights, dtype=float).reshape(record.in_dim, record.out_dim)
            layers.append(Layer(spec, weights))
        return cls(layers)

    def save(self, path: Path) -> None:
        payload = self.to_document().model_dump(mode="json")
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Network":
        document = NetworkDocument.model_validate_json(Path(path).read_text(encoding="utf-8"))
        return cls.from_document(document)


def forward_pass(net: Network, X: np.ndarray, upto: Optional[int] = None) -> list[LayerState]:
    """
    Project X through layers 1..upto.

    Returns a list indexed by layer: element 0 is the input (pre_activation
    None), element r holds (Z^{(r)}, X^{(r)}). `upto` defaults to every layer.
    """
    X = np.asarray(X, dtype=float)
    upto = net.n_layers if upto is None else upto
    if not 0 <= upto <= net.n_layers:
        raise IndexError(f"forward_pass upto={upto} outside 0..{net.n_layers}")
    if X.ndim != 2 or X.shape[0] != net.input_dim:
        raise ShapeMismatchError(
            f"input has shape {X.shape}; the first layer expects {net.input_dim} rows"
        )

    states = [LayerState(None, X)]
    for r in range(1, upto + 1):
        layer = net.layer(r)
        Z = layer.weights.T @ states[-1].activation
        states.append(LayerState(Z, act_forward(layer.spec.activation, Z)))
    return states


def backproject_labels(net: Network, Y: np.ndarray, downto: int) -> np.ndarray:
    """
    Backproject encoded labels to layer `downto`.

    Y^{(n_l)} is Y itself; below that Y^{(r)} = U_{r+1} f^{-1}_{r+1}(Pi(Y^{(r+1)})).
    """
    Y = np.asarray(Y, dtype=float)
    if not 1 <= downto <= net.n_layers:
        raise IndexError(f"backproject_labels downto={downto} outside 1..{net.n_layers}")
    if Y.ndim != 2 or Y.shape[0] != net.output_dim:
        raise ShapeMismatchError(
            f"labels have shape {Y.shape}; the last layer emits {net.output_dim} rows"
        )

    target = Y
    for r in range(net.n_layers - 1, downto - 1, -1):
        target = backproject_step(net.layer(r + 1), target)
    return target


def backproject_step(layer: Layer, target: np.ndarray) -> np.ndarray:
    """Carry a target one layer down: U f^{-1}(Pi(target)) for `layer`."""
    return layer.weights @ feasible_inverse(layer.spec.activation, target)


def decision_threshold(activation: ActivationKind | str) -> float:
    """Threshold for single-output networks: 0.5 under sigmoid, 0 under tanh and linear."""
    return 0.5 if ActivationKind(activation) is ActivationKind.SIGMOID else 0.0


def predict_from_outputs(outputs: np.ndarray, last_activation: ActivationKind | str) -> np.ndarray:
    """
    Class indices from network outputs (p x b).

    p >= 2 uses argmax with ties to the lowest index; p = 1 thresholds and
    sends values on the threshold to class 1.
    """
    outputs = np.asarray(outputs, dtype=float)
    if outputs.shape[0] == 1:
        return (outputs[0] >= decision_threshold(last_activation)).astype(int)
    return np.argmax(outputs, axis=0).astype(int)


def predict(net: Network, X: np.ndarray) -> np.ndarray:
    outputs = forward_pass(net, X)[-1].activation
    return predict_from_outputs(outputs, net.layers[-1].spec.activation)
