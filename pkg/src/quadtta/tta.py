"""Online adaptation latent: integrates bounded transition-residual
increments during an episode, with no gradient computation at run time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import TtaNet

__all__ = ["LatentState", "CLAMP_BOUND", "DEFAULT_ALPHA", "reset_latent", "latent_update"]

CLAMP_BOUND = 10.0
DEFAULT_ALPHA = 0.1


@dataclass
class LatentState:
    """Adaptation latent plus its fixed step size and clamp bound."""

    z: np.ndarray
    alpha: float
    clamp_bound: float = CLAMP_BOUND


def reset_latent(alpha: float, dim: int = 32, dtype=np.float32) -> LatentState:
    """Episode-start latent: zeros, matching the training-time reset."""
    if alpha < 0.0:
        raise ValueError("alpha must be >= 0")
    return LatentState(z=np.zeros(dim, dtype=dtype), alpha=float(alpha))


def latent_update(
    ls: LatentState, x: np.ndarray, u: np.ndarray, x_next: np.ndarray, tta_net: TtaNet
) -> LatentState:
    """One adaptation step from an observed transition.

    z <- clamp(z + alpha * f(x, u, x')); exactly one feed-forward pass, so
    the per-step latent drift is bounded by alpha in every component.
    """
    trans = np.concatenate([x, u, x_next]).astype(ls.z.dtype)[None, :]
    delta = tta_net.forward(trans)[0]
    z = np.clip(ls.z + ls.alpha * delta, -ls.clamp_bound, ls.clamp_bound)
    return LatentState(z=z, alpha=ls.alpha, clamp_bound=ls.clamp_bound)
