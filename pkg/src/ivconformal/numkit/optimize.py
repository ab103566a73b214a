"""First-order optimization utilities."""

from typing import Callable, Optional

import numpy as np

from ..errors import DivergenceError
from ..rng import RngStream


def adam_minimize(
    grad: Callable[[np.ndarray], np.ndarray],
    x0,
    steps: int,
    lr: float,
    rng: Optional[RngStream] = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """Run ``steps`` Adam updates from ``x0`` and return the final iterate.

    Fully deterministic: the trajectory depends only on ``grad`` and the
    arguments (``rng`` is accepted for interface uniformity with stochastic
    callers but is not consumed here).  Non-finite gradients or iterates abort
    with :class:`DivergenceError` carrying the offending step index.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if lr <= 0:
        raise ValueError("lr must be positive")
    x = np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 contains non-finite entries")
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t in range(1, steps + 1):
        g = np.asarray(grad(x), dtype=float)
        if g.shape != x.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {x.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient", step=t)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        if not np.all(np.isfinite(x)):
            raise DivergenceError("non-finite iterate", step=t)
    return x
