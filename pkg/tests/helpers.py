"""Shared test utilities: float64 finite-difference oracle for gradients."""

from __future__ import annotations

import numpy as np

from prefplan.numerics import Tensor


def fd_grad(loss_fn, params: list[Tensor], h: float = 1e-3) -> list[np.ndarray]:
    """Central finite differences of a scalar loss wrt each param, elementwise.

    Perturbs param data in place; callers should pass float64 params so the
    oracle is accurate enough to judge the analytic gradients.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = float(loss_fn().data)
            flat[i] = orig - h
            lm = float(loss_fn().data)
            flat[i] = orig
            gf[i] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-3)
    return float(np.max(np.abs(analytic - fd) / denom))


def f64_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    """Deep-copy a parameter dict to float64 tensors (for FD checks)."""
    return {k: Tensor(p.data.astype(np.float64), requires_grad=True) for k, p in params.items()}


def randomize_params(params: dict[str, Tensor], rng: np.random.Generator, scale: float = 0.3):
    """Re-draw params at O(scale) so an h=1e-3 probe is a small perturbation.

    Tiny init values (e.g. 0.02-std tokens) make central differences
    truncation-dominated; this keeps the check about gradient correctness.
    """
    for p in params.values():
        p.data = rng.normal(0.0, scale, size=p.data.shape).astype(p.data.dtype)
    return params
