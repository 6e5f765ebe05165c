"""Mini-batch Adam training loop with optional penalty and replay hooks."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from contaudit.errors import InputError
from contaudit.nn.losses import bce_loss
from contaudit.nn.model import Autoencoder, Gradients
from contaudit.nn.optim import AdamState, adam_step
from contaudit.seeding import derived_rng

log = logging.getLogger(__name__)

# penalty(model) -> (value added to the loss, gradient contribution)
PenaltyHook = Callable[[Autoencoder], tuple[float, Gradients]]
# extra_batches(rng, size) -> replay rows to append to the step batch, or None
BatchSource = Callable[[np.random.Generator, int], Optional[np.ndarray]]


@dataclass
class TrainConfig:
    max_epochs: int = 500
    batch_size: int = 128
    early_stop_patience: int = 10
    early_stop_rel_tol: float = 1e-4
    seed: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise InputError("max_epochs, batch_size and early_stop_patience must be >= 1")
        if self.early_stop_rel_tol <= 0.0:
            raise InputError("early_stop_rel_tol must be positive")


def train(
    model: Autoencoder,
    data: np.ndarray,
    config: TrainConfig,
    penalty: PenaltyHook | None = None,
    extra_batches: BatchSource | None = None,
) -> list[float]:
    """Train the model in place; returns the per-epoch mean loss history.

    Each epoch shuffles the data with a generator derived from
    (config.seed, epoch), walks it in mini-batches (final partial batch
    included) and applies one Adam step per batch. When extra_batches is
    given, its rows are appended to every step's batch. Training stops
    early once the relative epoch-loss improvement stays below
    early_stop_rel_tol for early_stop_patience consecutive epochs.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise InputError("training data is empty")
    if data.shape[1] != model.input_dim:
        raise InputError(f"data has {data.shape[1]} columns, expected {model.input_dim}")

    state = AdamState.init(
        model,
        lr=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.adam_eps,
    )
    history: list[float] = []
    flat_streak = 0
    for epoch in range(config.max_epochs):
        rng = derived_rng(config.seed, epoch)
        order = rng.permutation(data.shape[0])
        step_losses = []
        for start in range(0, data.shape[0], config.batch_size):
            batch = data[order[start : start + config.batch_size]]
            if extra_batches is not None:
                extra = extra_batches(rng, config.batch_size)
                if extra is not None and len(extra):
                    batch = np.vstack([batch, extra])
            recon, cache = model.forward(batch)
            _, loss = bce_loss(recon, batch)
            grads = model.backward(cache, batch)
            if penalty is not None:
                value, pgrads = penalty(model)
                loss += value
                grads = [(gw + pw, gb + pb) for (gw, gb), (pw, pb) in zip(grads, pgrads)]
            adam_step(model, grads, state)
            step_losses.append(loss)
        epoch_loss = float(np.mean(step_losses))
        history.append(epoch_loss)
        log.debug("epoch %d/%d: mean loss %.6f", epoch + 1, config.max_epochs, epoch_loss)
        if epoch > 0:
            prev = history[-2]
            improvement = (prev - epoch_loss) / max(abs(prev), 1e-12)
            flat_streak = flat_streak + 1 if improvement < config.early_stop_rel_tol else 0
            if flat_streak >= config.early_stop_patience:
                log.debug("early stop at epoch %d (loss %.6f)", epoch + 1, epoch_loss)
                break
    return history
