"""Dense autoencoder with analytic gradients, Adam optimization and BCE scoring."""

from contaudit.nn.layers import DenseLayer, init_glorot
from contaudit.nn.losses import EPS_CLAMP, bce_loss
from contaudit.nn.model import (
    AUDIT_HIDDEN_WIDTHS,
    Autoencoder,
    build_autoencoder,
    parameter_count,
)
from contaudit.nn.optim import AdamState, adam_step
from contaudit.nn.checkpoint import load_model, save_model
from contaudit.nn.training import TrainConfig, train

__all__ = [
    "AUDIT_HIDDEN_WIDTHS",
    "AdamState",
    "Autoencoder",
    "DenseLayer",
    "EPS_CLAMP",
    "TrainConfig",
    "adam_step",
    "bce_loss",
    "build_autoencoder",
    "init_glorot",
    "load_model",
    "parameter_count",
    "save_model",
    "train",
]
