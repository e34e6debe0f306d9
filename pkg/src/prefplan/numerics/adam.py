"""Adam with decoupled weight decay, operating on named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import NumericsError, Tensor


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not (0 < self.beta1 < self.beta2 < 1):
            raise ValueError(f"need 0 < beta1 < beta2 < 1, got {self.beta1}, {self.beta2}")


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.step = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, config: AdamConfig) -> tuple[dict[str, Tensor], AdamState]:
    """One in-place update; returns the (mutated) params and state.

    Weight decay is decoupled from the moment estimates: p -= lr * wd * p.
    """
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    lr, eps, wd = config.learning_rate, config.epsilon, config.weight_decay
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise NumericsError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name!r}")
        if not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        if kernels.AVAILABLE and p.data.dtype == np.float32 and p.data.flags.c_contiguous:
            kernels.adam_update(
                p.data.reshape(-1), np.ascontiguousarray(g, dtype=np.float32).reshape(-1),
                m.reshape(-1), v.reshape(-1),
                np.float32(b1), np.float32(b2), np.float32(bc1), np.float32(bc2),
                np.float32(lr), np.float32(eps), np.float32(wd))
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if wd > 0.0:
            p.data -= lr * wd * p.data
        p.data -= lr * update
    return params, state
