"""Bias-corrected Adam on flat float vectors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass
class AdamState:
    """First/second moment buffers plus the step counter for one parameter block."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    epsilon: float = EPSILON

    @classmethod
    def zeros(cls, n: int, dtype=np.float64) -> "AdamState":
        return cls(m=np.zeros(n, dtype=dtype), v=np.zeros(n, dtype=dtype))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              block: str = "params") -> np.ndarray:
    """One Adam update. Mutates state, returns the updated parameter vector.

    Raises NumericError naming the block if the gradient is non-finite.
    """
    params = np.asarray(params)
    grads = np.asarray(grads)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeError(
            f"adam_step shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"state {state.m.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise NumericError(f"non-finite gradient in parameter block '{block}'")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
