"""Fused single-pass kernels for the hot elementwise ops (numba-backed).

Pure-numpy fallbacks live in tensor.py; these exist because the training
loops are memory-bound on elementwise chains at desk scale. All kernels
are float32, sequential, and IEEE-strict so runs stay deterministic.
Set PREFPLAN_NO_NUMBA=1 to disable.
"""

from __future__ import annotations

import math
import os

import numpy as np

AVAILABLE = False

if not os.environ.get("PREFPLAN_NO_NUMBA"):
    try:
        from numba import njit

        _jit = njit(cache=True, fastmath=False)

        @_jit
        def layer_norm_fwd(x, gain, bias, eps):
            r, n = x.shape
            out = np.empty_like(x)
            y = np.empty_like(x)
            inv = np.empty(r, dtype=x.dtype)
            for i in range(r):
                mu = np.float32(0.0)
                for j in range(n):
                    mu += x[i, j]
                mu /= n
                var = np.float32(0.0)
                for j in range(n):
                    d = x[i, j] - mu
                    var += d * d
                var /= n
                s = np.float32(1.0) / math.sqrt(var + eps)
                inv[i] = s
                for j in range(n):
                    yy = (x[i, j] - mu) * s
                    y[i, j] = yy
                    out[i, j] = yy * gain[j] + bias[j]
            return out, y, inv

        @_jit
        def layer_norm_bwd(g, y, inv, gain):
            r, n = g.shape
            dx = np.empty_like(g)
            dgain = np.zeros(n, dtype=g.dtype)
            dbias = np.zeros(n, dtype=g.dtype)
            for i in range(r):
                gm = np.float32(0.0)
                gym = np.float32(0.0)
                for j in range(n):
                    gy = g[i, j] * gain[j]
                    gm += gy
                    gym += gy * y[i, j]
                    dgain[j] += g[i, j] * y[i, j]
                    dbias[j] += g[i, j]
                gm /= n
                gym /= n
                for j in range(n):
                    dx[i, j] = inv[i] * (g[i, j] * gain[j] - gm - y[i, j] * gym)
            return dx, dgain, dbias

        _GC = np.float32(math.sqrt(2.0 / math.pi))
        _GA = np.float32(0.044715)

        @_jit
        def gelu_fwd(x):
            out = np.empty_like(x)
            t = np.empty_like(x)
            for i in range(x.size):
                v = x[i]
                tt = math.tanh(_GC * (v + _GA * v * v * v))
                t[i] = tt
                out[i] = np.float32(0.5) * v * (np.float32(1.0) + tt)
            return out, t

        @_jit
        def gelu_bwd(g, x, t):
            dx = np.empty_like(g)
            for i in range(g.size):
                v = x[i]
                tt = t[i]
                dinner = _GC * (np.float32(1.0) + np.float32(3.0) * _GA * v * v)
                dx[i] = g[i] * (np.float32(0.5) * (np.float32(1.0) + tt)
                                + np.float32(0.5) * v * (np.float32(1.0) - tt * tt) * dinner)
            return dx

        @_jit
        def softmax_fwd(x):
            r, n = x.shape
            out = np.empty_like(x)
            for i in range(r):
                m = x[i, 0]
                for j in range(1, n):
                    if x[i, j] > m:
                        m = x[i, j]
                s = np.float32(0.0)
                for j in range(n):
                    e = math.exp(x[i, j] - m)
                    out[i, j] = e
                    s += e
                s = np.float32(1.0) / s
                for j in range(n):
                    out[i, j] *= s
            return out

        @_jit
        def softmax_bwd(g, out):
            r, n = g.shape
            dx = np.empty_like(g)
            for i in range(r):
                dot = np.float32(0.0)
                for j in range(n):
                    dot += g[i, j] * out[i, j]
                for j in range(n):
                    dx[i, j] = out[i, j] * (g[i, j] - dot)
            return dx

        @_jit
        def adam_update(p, g, m, v, b1, b2, bc1, bc2, lr, eps, wd):
            for i in range(p.size):
                gi = g[i]
                m[i] = b1 * m[i] + (np.float32(1.0) - b1) * gi
                v[i] = b2 * v[i] + (np.float32(1.0) - b2) * gi * gi
                upd = (m[i] / bc1) / (math.sqrt(v[i] / bc2) + eps)
                p[i] -= lr * (upd + wd * p[i])
            return p

        AVAILABLE = True
    except ImportError:  # pragma: no cover - numba is normally present
        pass
