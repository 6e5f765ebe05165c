"""Binary cross-entropy reconstruction loss.

The per-row loss is the mean over encoded dimensions of
-[t*log(r) + (1-t)*log(1-r)], with predictions clamped to
[EPS_CLAMP, 1-EPS_CLAMP] before the logs so the loss stays finite.
"""

import numpy as np

from contaudit.errors import InputError

EPS_CLAMP = 1e-7


def bce_loss(
    reconstruction: np.ndarray, target: np.ndarray, eps: float = EPS_CLAMP
) -> tuple[np.ndarray, float]:
    """Per-row BCE vector of shape (B,) and its batch mean."""
    reconstruction = np.atleast_2d(np.asarray(reconstruction, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if reconstruction.shape != target.shape:
        raise InputError(
            f"shape mismatch: reconstruction {reconstruction.shape} vs target {target.shape}"
        )
    r = np.clip(reconstruction, eps, 1.0 - eps)
    per_row = -np.mean(target * np.log(r) + (1.0 - target) * np.log1p(-r), axis=1)
    return per_row, float(np.mean(per_row))


def bce_output_grad(
    reconstruction: np.ndarray, target: np.ndarray, eps: float = EPS_CLAMP
) -> np.ndarray:
    """Gradient of the batch-mean BCE w.r.t. the reconstruction.

    Entries pushed outside the clamp interval contribute zero gradient,
    matching the loss actually computed by bce_loss.
    """
    b, d = reconstruction.shape
    r = np.clip(reconstruction, eps, 1.0 - eps)
    inside = (reconstruction > eps) & (reconstruction < 1.0 - eps)
    grad = np.where(inside, (r - target) / (r * (1.0 - r)), 0.0)
    return grad / (b * d)
