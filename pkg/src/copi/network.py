"""Layered model ``x_l = R_l y_{l-1}``, ``a_l = W_l x_l``, ``y_l = f(a_l)``."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from copi.errors import ContractError
from copi.tensor import as_matrix, scaled_uniform

LEAKY_RELU = "leaky-relu"
IDENTITY = "identity"
DEFAULT_SLOPE = 0.1


def leaky_relu(a: np.ndarray, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    return np.where(a > 0, a, slope * a)


def leaky_relu_deriv(a: np.ndarray, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    # a == 0 takes the negative-side slope
    return np.where(a > 0, 1.0, slope)


@dataclass
class Layer:
    W: np.ndarray
    R: np.ndarray
    activation: str = LEAKY_RELU
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        self.W = as_matrix(self.W)
        self.R = as_matrix(self.R)
        if not (self.W.shape[1] == self.R.shape[0] == self.R.shape[1]):
            raise ContractError(f"W {self.W.shape} and R {self.R.shape} do not chain")
        if self.activation not in (LEAKY_RELU, IDENTITY):
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.activation == LEAKY_RELU and not (0.0 < self.slope <= 1.0):
            raise ContractError(f"leaky-relu slope must lie in (0, 1], got {self.slope}")

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def f(self, a: np.ndarray) -> np.ndarray:
        if self.activation == IDENTITY:
            return a.copy()
        return leaky_relu(a, self.slope)

    def f_deriv(self, a: np.ndarray) -> np.ndarray:
        if self.activation == IDENTITY:
            return np.ones_like(a)
        return leaky_relu_deriv(a, self.slope)


@dataclass
class LayerState:
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray


@dataclass
class Network:
    """Ordered layers plus optional fixed feedback matrices for feedback alignment.

    ``feedback[i]`` carries the error from layer ``i + 1`` down to layer ``i``
    and has shape ``(layers[i].n_out, layers[i + 1].n_out)``.
    """

    layers: list[Layer]
    feedback: list[np.ndarray] | None = None

    def __post_init__(self):
        if not self.layers:
            raise ContractError("a network needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].n_in != self.layers[i - 1].n_out:
                raise ContractError(
                    f"layer {i} expects {self.layers[i].n_in} inputs, layer {i - 1} gives {self.layers[i - 1].n_out}")
        if self.feedback is not None:
            if len(self.feedback) != len(self.layers) - 1:
                raise ContractError("need one feedback matrix per layer except the last")
            for i, b in enumerate(self.feedback):
                want = (self.layers[i].n_out, self.layers[i + 1].n_out)
                if b.shape != want:
                    raise ContractError(f"feedback[{i}] has shape {b.shape}, expected {want}")

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def copy(self) -> "Network":
        return copy.deepcopy(self)


def build_network(rng: np.random.Generator, dims: Sequence[int], slope: float = DEFAULT_SLOPE,
                  fa: bool = False, hidden_activation: str = LEAKY_RELU,
                  output_activation: str = IDENTITY) -> Network:
    """Random forward weights, identity lateral weights, optional feedback weights.

    Forward and feedback weights are uniform on ``+-sqrt(1/fan_in)``.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ContractError("dims needs at least an input and an output size")
    if any(d < 1 for d in dims):
        raise ContractError(f"all layer sizes must be positive, got {dims}")
    layers = []
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        W = scaled_uniform(rng, dims[i + 1], dims[i], dims[i])
        layers.append(Layer(W, np.eye(dims[i]), output_activation if last else hidden_activation, slope))
    feedback = None
    if fa:
        feedback = [scaled_uniform(rng, dims[i + 1], dims[i + 2], dims[i + 2]) for i in range(len(dims) - 2)]
    return Network(layers, feedback)


def forward(network: Network, y0: np.ndarray) -> list[LayerState]:
    y = as_matrix(y0)
    if y.shape[0] != network.layers[0].n_in:
        raise ContractError(f"input has {y.shape[0]} rows, network expects {network.layers[0].n_in}")
    states = []
    for layer in network.layers:
        x = layer.R @ y
        a = layer.W @ x
        y = layer.f(a)
        states.append(LayerState(x, a, y))
    return states


def predict(network: Network, y0: np.ndarray, batch: int = 1000) -> np.ndarray:
    """Output ``y_L`` for every column of ``y0``, computed in column blocks."""
    outs = [forward(network, y0[:, s:s + batch])[-1].y for s in range(0, y0.shape[1], batch)]
    return np.concatenate(outs, axis=1)
