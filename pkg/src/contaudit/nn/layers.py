"""Dense layers, activations and Glorot initialization."""

from dataclasses import dataclass, field

import numpy as np

from contaudit.errors import InputError
from contaudit.seeding import derived_rng

LEAKY_RELU = "leaky_relu"
TANH = "tanh"
SIGMOID = "sigmoid"

ACTIVATIONS = (LEAKY_RELU, TANH, SIGMOID)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activate(kind: str, alpha: float, z: np.ndarray) -> np.ndarray:
    if kind == LEAKY_RELU:
        return np.where(z > 0.0, z, alpha * z)
    if kind == TANH:
        return np.tanh(z)
    if kind == SIGMOID:
        return sigmoid(z)
    raise InputError(f"unknown activation: {kind!r}")


def activate_grad(kind: str, alpha: float, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation z (a = activate(z))."""
    if kind == LEAKY_RELU:
        return np.where(z > 0.0, 1.0, alpha)
    if kind == TANH:
        return 1.0 - a * a
    if kind == SIGMOID:
        return a * (1.0 - a)
    raise InputError(f"unknown activation: {kind!r}")


@dataclass
class DenseLayer:
    """One fully connected layer: a = act(x @ W.T + b).

    weights has shape (out, in); bias has shape (out,). Shapes are fixed
    after construction.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str
    alpha: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise InputError("weights must be 2-d and bias 1-d")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise InputError(
                f"bias length {self.bias.shape[0]} does not match "
                f"output width {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation: {self.activation!r}")
        if self.activation == LEAKY_RELU and not 0.0 < self.alpha < 1.0:
            raise InputError("leaky_relu slope must lie in (0, 1)")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation, self.alpha)


def init_glorot(fan_in: int, fan_out: int, seed: int | np.random.Generator) -> np.ndarray:
    """Weight matrix (fan_out, fan_in) drawn uniformly from +-sqrt(6/(fan_in+fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise InputError("fan_in and fan_out must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else derived_rng(seed)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))
