"""RMSProp and finite-difference gradient checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, TextIO

import numpy as np

from .errors import NonFiniteGradient, NonFiniteValue, ShapeMismatch

__all__ = ["RmspropConfig", "GradOptTrace", "rmsprop_step", "finite_diff_grad", "minimize_grad"]


@dataclass(frozen=True)
class RmspropConfig:
    learning_rate: float = 0.01
    decay: float = 0.9
    epsilon: float = 1e-8
    steps: int = 100

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass
class GradOptTrace:
    losses: list[float] = field(default_factory=list)
    params: Optional[np.ndarray] = None

    def write_csv(self, fh: TextIO) -> None:
        fh.write("step,loss\n")
        for i, loss in enumerate(self.losses):
            fh.write(f"{i},{loss!r}\n")


def rmsprop_step(params, grads, accumulator, config: RmspropConfig):
    """One non-centered RMSProp update.

    ``acc' = decay * acc + (1 - decay) * g**2`` and
    ``p' = p - lr * g / (sqrt(acc') + eps)``, elementwise.
    """
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    acc = np.asarray(accumulator, dtype=np.float64)
    if p.shape != g.shape or p.shape != acc.shape:
        raise ShapeMismatch(f"shapes differ: params {p.shape}, grads {g.shape}, acc {acc.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    rho = config.decay
    acc = rho * acc + (1.0 - rho) * g * g
    p = p - config.learning_rate * g / (np.sqrt(acc) + config.epsilon)
    return p, acc


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time."""
    if not h > 0:
        raise ValueError("h must be > 0")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteValue("objective returned non-finite values during differencing")
    return grad


def minimize_grad(loss_and_grad, x0, config: RmspropConfig) -> GradOptTrace:
    """Run exactly ``config.steps`` RMSProp updates from ``x0``.

    The trace holds the loss before every step plus the final loss
    (``steps + 1`` values) and the final parameters.
    """
    x = np.array(x0, dtype=np.float64)
    acc = np.zeros_like(x)
    trace = GradOptTrace()
    loss, grad = loss_and_grad(x)
    trace.losses.append(float(loss))
    for _ in range(config.steps):
        x, acc = rmsprop_step(x, grad, acc, config)
        loss, grad = loss_and_grad(x)
        trace.losses.append(float(loss))
    trace.params = x
    return trace
