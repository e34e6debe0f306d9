"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps an ndarray plus the closures needed to push gradients back
to its parents. Every differentiable computation in the package is built
from the ops registered here; finite-difference tests in the suite pin
their correctness. float32 is the working precision (float64 is accepted
so gradient checks can run at oracle precision).

Hot paths matter: `linear` collapses leading axes into a single GEMM, and
layer_norm / softmax / activations are single fused nodes instead of
primitive compositions.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from . import kernels


class NumericsError(RuntimeError):
    """Contract violation inside the numerics layer."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Skip graph construction inside the block (inference paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(x, like: np.ndarray | None = None):
    if isinstance(x, np.ndarray):
        return x
    dtype = like.dtype if like is not None else np.float32
    return np.asarray(x, dtype=dtype)


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._vjp: list[tuple[Tensor, object]] = []

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        backward(self)

    # operator sugar; all arithmetic goes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents_vjps) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED:
        links = [(p, fn) for p, fn in parents_vjps if p.requires_grad]
        if links:
            out.requires_grad = True
            out._vjp = links
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(root: Tensor):
    """Backpropagate from a scalar root, filling .grad on reachable tensors."""
    if root.data.size != 1:
        raise NumericsError(f"backward requires a scalar root, got shape {root.data.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node._vjp:
            if id(parent) not in visited:
                stack.append((parent, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        g = node.grad
        for parent, fn in node._vjp:
            contrib = fn(g)
            if parent.grad is None:
                parent.grad = contrib
            else:
                parent.grad = parent.grad + contrib


def grad(loss_fn, params) -> list[np.ndarray]:
    """Evaluate a scalar-valued loss_fn and return d(loss)/d(param) per param.

    Raises if the loss is non-scalar. Parameters that the loss does not
    touch get a zero gradient of the right shape.
    """
    loss = loss_fn()
    if not isinstance(loss, Tensor):
        raise NumericsError("loss_fn must return a Tensor")
    if loss.data.size != 1:
        raise NumericsError(f"loss must be scalar, got shape {loss.data.shape}")
    params = list(params)
    for p in params:
        p.grad = None
    backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    data = a.data + b.data
    return _make(data, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def sub(a, b):
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    data = a.data - b.data
    return _make(data, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ])


def mul(a, b):
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    data = a.data * b.data
    return _make(data, [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def div(a, b):
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    inv = 1.0 / b.data
    data = a.data * inv
    return _make(data, [
        (a, lambda g: _unbroadcast(g * inv, a.data.shape)),
        (b, lambda g: _unbroadcast(-g * data * inv, b.data.shape)),
    ])


def powc(a: Tensor, c: float):
    """a ** c for a constant exponent."""
    data = a.data ** c
    return _make(data, [(a, lambda g: g * (c * a.data ** (c - 1.0)))])


def square(a: Tensor):
    return _make(a.data * a.data, [(a, lambda g: g * (2.0 * a.data))])


def texp(a: Tensor):
    data = np.exp(a.data)
    return _make(data, [(a, lambda g: g * data)])


def tlog(a: Tensor):
    return _make(np.log(a.data), [(a, lambda g: g / a.data)])


def tsqrt(a: Tensor):
    data = np.sqrt(a.data)
    return _make(data, [(a, lambda g: g * (0.5 / data))])


def tanh(a: Tensor):
    data = np.tanh(a.data)
    return _make(data, [(a, lambda g: g * (1.0 - data * data))])


def sigmoid(a: Tensor):
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)
    return _make(data, [(a, lambda g: g * (data * (1.0 - data)))])


def logsigmoid(a: Tensor):
    x = a.data
    data = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))
    data = data.astype(x.dtype)
    sig_neg = 1.0 / (1.0 + np.exp(np.clip(x, -60.0, 60.0)))  # sigmoid(-x)
    return _make(data, [(a, lambda g: g * sig_neg)])


def relu(a: Tensor):
    data = np.maximum(a.data, 0)
    return _make(data, [(a, lambda g: g * (a.data > 0))])


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor):
    """tanh-approximated GELU (single fused node)."""
    x = a.data
    if kernels.AVAILABLE and x.dtype == np.float32:
        xc = np.ascontiguousarray(x)
        flat, t = kernels.gelu_fwd(xc.reshape(-1))
        data = flat.reshape(x.shape)
        return _make(data, [(a, lambda g: kernels.gelu_bwd(
            np.ascontiguousarray(g).reshape(-1), xc.reshape(-1), t).reshape(x.shape))])
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)

    return _make(0.5 * x * (1.0 + t), [(a, vjp)])


def silu(a: Tensor):
    x = a.data
    s = 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))
    return _make(x * s, [(a, lambda g: g * (s * (1.0 + x * (1.0 - s))))])


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape):
    old = a.data.shape
    return _make(a.data.reshape(shape), [(a, lambda g: g.reshape(old))])


def swapaxes(a: Tensor, ax1: int, ax2: int):
    return _make(np.swapaxes(a.data, ax1, ax2), [(a, lambda g: np.swapaxes(g, ax1, ax2))])


def broadcast_to(a: Tensor, shape):
    return _make(np.broadcast_to(a.data, shape).copy(), [(a, lambda g: _unbroadcast(g, a.data.shape))])


def concat(tensors, axis: int):
    tensors = [t for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    links = []
    for i, t in enumerate(tensors):
        sl = [slice(None)] * data.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        links.append((t, lambda g, sl=tuple(sl): g[sl]))
    return _make(data, links)


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, np.integer, slice, type(None), type(Ellipsis))) for p in parts)


def getitem(a: Tensor, key):
    data = a.data[key]
    if _is_basic_index(key):
        # basic indexing never repeats elements, so plain assignment suffices
        def vjp(g):
            out = np.zeros_like(a.data)
            out[key] = g
            return out
    else:
        def vjp(g):
            out = np.zeros_like(a.data)
            np.add.at(out, key, g)
            return out

    return _make(data.copy() if isinstance(data, np.ndarray) else data, [(a, vjp)])


def tsum(a: Tensor, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).astype(a.data.dtype)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.data.shape).astype(a.data.dtype)

    return _make(np.asarray(data), [(a, vjp)])


def tmean(a: Tensor, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor):
    """General (optionally batched) matmul; use `linear` for dense layers."""
    data = np.matmul(a.data, b.data)

    def vjp_a(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        return _unbroadcast(ga, a.data.shape)

    def vjp_b(g):
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(gb, b.data.shape)

    return _make(data, [(a, vjp_a), (b, vjp_b)])


def linear(x: Tensor, w: Tensor, b: Tensor | None = None):
    """x @ w (+ b) with leading axes flattened into one GEMM.

    x: (..., D), w: (D, F), b: (F,).
    """
    lead = x.data.shape[:-1]
    d = x.data.shape[-1]
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    out2 = x2 @ w.data
    if b is not None:
        out2 += b.data
    data = out2.reshape(*lead, w.data.shape[1])

    def vjp_x(g):
        g2 = g.reshape(-1, w.data.shape[1])
        return (g2 @ w.data.T).reshape(x.data.shape)

    def vjp_w(g):
        g2 = g.reshape(-1, w.data.shape[1])
        return x2.T @ g2

    links = [(x, vjp_x), (w, vjp_w)]
    if b is not None:
        links.append((b, lambda g: g.reshape(-1, w.data.shape[1]).sum(axis=0)))
    return _make(data, links)


def embedding(table: Tensor, idx: np.ndarray):
    """Row lookup: table (V, D), idx int array -> (idx.shape..., D)."""
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise NumericsError("embedding indices must be integers")
    data = table.data[idx]

    def vjp(g):
        out = np.zeros_like(table.data)
        np.add.at(out, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return out

    return _make(data, [(table, vjp)])


# ---------------------------------------------------------------------------
# fused neural-net ops


def softmax(a: Tensor, axis: int = -1):
    x = a.data
    if kernels.AVAILABLE and x.dtype == np.float32 and axis in (-1, x.ndim - 1):
        n = x.shape[-1]
        xc = np.ascontiguousarray(x)
        data = kernels.softmax_fwd(xc.reshape(-1, n)).reshape(x.shape)
        return _make(data, [(a, lambda g: kernels.softmax_bwd(
            np.ascontiguousarray(g).reshape(-1, n), data.reshape(-1, n)).reshape(x.shape))])
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return data * (g - dot)

    return _make(data, [(a, vjp)])


_LN_ONES: dict[tuple[int, str], np.ndarray] = {}


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5):
    """Normalize the last axis; optional elementwise affine."""
    if kernels.AVAILABLE and x.data.dtype == np.float32:
        n = x.data.shape[-1]
        key = (n, "ones")
        if key not in _LN_ONES:
            _LN_ONES[key] = np.ones(n, dtype=np.float32)
            _LN_ONES[(n, "zeros")] = np.zeros(n, dtype=np.float32)
        g_arr = gain.data if gain is not None else _LN_ONES[(n, "ones")]
        b_arr = bias.data if bias is not None else _LN_ONES[(n, "zeros")]
        x2 = np.ascontiguousarray(x.data).reshape(-1, n)
        out2, y2, inv = kernels.layer_norm_fwd(x2, g_arr, b_arr, np.float32(eps))
        saved: dict = {}

        def run_bwd(g):
            if "dx" not in saved:
                dx, dgain, dbias = kernels.layer_norm_bwd(
                    np.ascontiguousarray(g).reshape(-1, n), y2, inv, g_arr)
                saved["dx"], saved["dgain"], saved["dbias"] = dx, dgain, dbias
            return saved

        links = [(x, lambda g: run_bwd(g)["dx"].reshape(x.data.shape))]
        if gain is not None:
            links.append((gain, lambda g: run_bwd(g)["dgain"]))
        if bias is not None:
            links.append((bias, lambda g: run_bwd(g)["dbias"]))
        return _make(out2.reshape(x.data.shape), links)

    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    data = y
    if gain is not None:
        data = data * gain.data
    if bias is not None:
        data = data + bias.data

    n = x.data.shape[-1]

    def vjp_x(g):
        gy = g * gain.data if gain is not None else g
        gy_mean = gy.mean(axis=-1, keepdims=True)
        gyy_mean = (gy * y).mean(axis=-1, keepdims=True)
        return inv * (gy - gy_mean - y * gyy_mean)

    links = [(x, vjp_x)]
    if gain is not None:
        links.append((gain, lambda g: (g * y).reshape(-1, n).sum(axis=0)))
    if bias is not None:
        links.append((bias, lambda g: g.reshape(-1, n).sum(axis=0)))
    return _make(data, links)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool):
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p <= 0.0:
        return x
    keep = 1.0 - p
    u = rng.random(x.data.shape, dtype=np.float32 if x.data.dtype == np.float32 else np.float64)
    mask = (u < keep).astype(x.data.dtype)
    mask /= np.asarray(keep, dtype=x.data.dtype)
    return _make(x.data * mask, [(x, lambda g: g * mask)])
