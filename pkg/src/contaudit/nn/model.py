"""Symmetric dense autoencoder with forward pass and exact analytic gradients.

The audit models narrow from the encoded input down to a 2-unit bottleneck
and mirror back out: hidden widths 128-64-32-16-8-4-2. Hidden layers use
leaky ReLU (slope 0.4), the bottleneck uses tanh and the output layer uses
sigmoid so reconstructions stay inside (0, 1) as BCE requires.
"""

from dataclasses import dataclass

import numpy as np

from contaudit.errors import InputError, InternalError
from contaudit.nn.layers import (
    LEAKY_RELU,
    SIGMOID,
    TANH,
    DenseLayer,
    activate,
    activate_grad,
    init_glorot,
)
from contaudit.nn.losses import EPS_CLAMP, bce_loss, bce_output_grad
from contaudit.seeding import derived_rng

AUDIT_HIDDEN_WIDTHS = (128, 64, 32, 16, 8, 4, 2)
AUDIT_LEAKY_ALPHA = 0.4

# gradients are lists of (dW, db) pairs aligned with Autoencoder.layers
Gradients = list[tuple[np.ndarray, np.ndarray]]


@dataclass
class ForwardCache:
    """Per-layer activations retained by forward() for backward()."""

    activations: list[np.ndarray]  # length n_layers + 1; [0] is the input batch
    pre_activations: list[np.ndarray]  # length n_layers


class Autoencoder:
    def __init__(self, encoder: list[DenseLayer], decoder: list[DenseLayer], input_dim: int):
        if not encoder or not decoder:
            raise InputError("encoder and decoder must each have at least one layer")
        if encoder[0].fan_in != input_dim or decoder[-1].fan_out != input_dim:
            raise InputError("first encoder fan_in and last decoder fan_out must equal input_dim")
        chain = encoder + decoder
        for prev, nxt in zip(chain, chain[1:]):
            if prev.fan_out != nxt.fan_in:
                raise InputError(
                    f"layer widths do not chain: {prev.fan_out} -> {nxt.fan_in}"
                )
        self.encoder = encoder
        self.decoder = decoder
        self.input_dim = input_dim

    @property
    def layers(self) -> list[DenseLayer]:
        return self.encoder + self.decoder

    @property
    def bottleneck_dim(self) -> int:
        return self.encoder[-1].fan_out

    def copy(self) -> "Autoencoder":
        return Autoencoder(
            [layer.copy() for layer in self.encoder],
            [layer.copy() for layer in self.decoder],
            self.input_dim,
        )

    def forward(self, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        """Reconstruct a (B, input_dim) batch; also returns the backward cache."""
        x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise InputError(f"batch has {x.shape[1]} columns, expected {self.input_dim}")
        activations = [x]
        pre_activations = []
        for layer in self.layers:
            z = activations[-1] @ layer.weights.T + layer.bias
            pre_activations.append(z)
            activations.append(activate(layer.activation, layer.alpha, z))
        return activations[-1], ForwardCache(activations, pre_activations)

    def backward(self, cache: ForwardCache, target: np.ndarray) -> Gradients:
        """Gradients of the batch-mean BCE loss w.r.t. every weight and bias."""
        layers = self.layers
        if len(cache.pre_activations) != len(layers):
            raise InternalError("cache does not match this model's layer count")
        target = np.atleast_2d(np.asarray(target, dtype=np.float64))
        recon = cache.activations[-1]
        if recon.shape != target.shape:
            raise InternalError(
                f"cache batch shape {recon.shape} does not match target {target.shape}"
            )
        d_act = bce_output_grad(recon, target)
        grads: Gradients = [None] * len(layers)  # type: ignore[list-item]
        for i in range(len(layers) - 1, -1, -1):
            layer = layers[i]
            z = cache.pre_activations[i]
            a = cache.activations[i + 1]
            if z.shape[1] != layer.fan_out:
                raise InternalError("cache layer widths do not match this model")
            dz = d_act * activate_grad(layer.activation, layer.alpha, z, a)
            grads[i] = (dz.T @ cache.activations[i], dz.sum(axis=0))
            if i > 0:
                d_act = dz @ layer.weights
        return grads

    def reconstruction_errors(self, rows: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Per-row BCE between each row and its reconstruction (the anomaly score)."""
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[1] != self.input_dim:
            raise InputError(f"rows have {rows.shape[1]} columns, expected {self.input_dim}")
        out = np.empty(rows.shape[0], dtype=np.float64)
        for start in range(0, rows.shape[0], chunk):
            part = rows[start : start + chunk]
            recon, _ = self.forward(part)
            per_row, _ = bce_loss(recon, part, eps=EPS_CLAMP)
            out[start : start + len(part)] = per_row
        return out

    def reconstruction_error(self, entry: np.ndarray) -> float:
        entry = np.asarray(entry, dtype=np.float64)
        if entry.ndim != 1:
            raise InputError("entry must be a single 1-d vector")
        return float(self.reconstruction_errors(entry[None, :])[0])


def build_autoencoder(
    input_dim: int,
    seed: int,
    hidden_widths: tuple[int, ...] = AUDIT_HIDDEN_WIDTHS,
    leaky_alpha: float = AUDIT_LEAKY_ALPHA,
) -> Autoencoder:
    """Glorot-initialized symmetric autoencoder, deterministic per seed.

    The encoder maps input_dim through hidden_widths (last entry is the
    bottleneck); the decoder mirrors the widths back to input_dim.
    """
    if input_dim < 1:
        raise InputError("input_dim must be >= 1")
    if not hidden_widths:
        raise InputError("hidden_widths must be nonempty")
    enc_chain = (input_dim,) + tuple(hidden_widths)
    dec_chain = tuple(reversed(hidden_widths)) + (input_dim,)
    rng = derived_rng(seed)
    seeds = rng.spawn(len(enc_chain) - 1 + len(dec_chain) - 1)

    def make(fan_in, fan_out, activation, child):
        return DenseLayer(
            weights=init_glorot(fan_in, fan_out, child),
            bias=np.zeros(fan_out),
            activation=activation,
            alpha=leaky_alpha if activation == LEAKY_RELU else 0.0,
        )

    encoder = []
    for i, (fi, fo) in enumerate(zip(enc_chain, enc_chain[1:])):
        act = TANH if i == len(enc_chain) - 2 else LEAKY_RELU
        encoder.append(make(fi, fo, act, seeds[i]))
    decoder = []
    for i, (fi, fo) in enumerate(zip(dec_chain, dec_chain[1:])):
        act = SIGMOID if i == len(dec_chain) - 2 else LEAKY_RELU
        decoder.append(make(fi, fo, act, seeds[len(encoder) + i]))
    return Autoencoder(encoder, decoder, input_dim)


def parameter_count(model: Autoencoder) -> int:
    return sum(layer.weights.size + layer.bias.size for layer in model.layers)


def zero_gradients(model: Autoencoder) -> Gradients:
    return [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in model.layers]


def add_gradients(a: Gradients, b: Gradients) -> Gradients:
    return [(aw + bw, ab + bb) for (aw, ab), (bw, bb) in zip(a, b)]
