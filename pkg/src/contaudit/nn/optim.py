"""Adam optimizer with bias-corrected moments."""

from dataclasses import dataclass, field

import numpy as np

from contaudit.errors import InputError
from contaudit.nn.model import Autoencoder, Gradients


@dataclass
class AdamState:
    """First/second moment accumulators, shaped like the model parameters."""

    m: Gradients
    v: Gradients
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(
        cls,
        model: Autoencoder,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        if lr <= 0.0:
            raise InputError("learning rate must be positive")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise InputError("beta1 and beta2 must lie in (0, 1)")
        zeros = lambda: [
            (np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in model.layers
        ]
        return cls(m=zeros(), v=zeros(), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(model: Autoencoder, grads: Gradients, state: AdamState) -> None:
    """One in-place Adam update of every weight and bias."""
    if len(grads) != len(model.layers):
        raise InputError("gradient structure does not match the model")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for layer, (gw, gb), (mw, mb), (vw, vb) in zip(model.layers, grads, state.m, state.v):
        for param, g, m, v in ((layer.weights, gw, mw, vw), (layer.bias, gb, mb, vb)):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * np.square(g)
            param -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
