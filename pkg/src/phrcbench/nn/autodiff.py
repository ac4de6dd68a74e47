"""Reverse-accumulation autodiff over float64 numpy arrays.

Each primitive carries an explicitly coded backward rule; there is no
external autodiff framework underneath, so the finite-difference test suite
exercises the exact gradient path used for training.  Tensors may carry a
leading batch axis; parameter tensors stay 1-D/2-D/3-D and gradients are
summed back over broadcast axes.
"""

from __future__ import annotations

import numpy as np

_grad_enabled = True


class no_grad:
    """Context manager that skips graph construction (inference fast path)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Graph node: float64 payload, parents, and the local backward rule."""

    __slots__ = ("data", "grad", "parents", "bwd")

    def __init__(self, data, parents=(), bwd=None):
        self.data = np.asarray(data, dtype=np.float64)
        if _grad_enabled:
            self.parents = tuple(parents)
            self.bwd = bwd
        else:
            self.parents = ()
            self.bwd = None
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo(root: Tensor) -> list:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every reachable node."""
    if root.data.size != 1:
        raise ValueError("backward root must be scalar")
    order = _topo(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node.bwd is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.bwd(node.grad)):
            if g is None:
                continue
            # grads are never mutated in place, so sharing views is safe
            parent.grad = g if parent.grad is None else parent.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.data * c, (a,), lambda g: (g * c,))


def mul_const(a: Tensor, arr) -> Tensor:
    """Elementwise multiply by a constant array (dropout masks, noise draws)."""
    arr = np.asarray(arr, dtype=np.float64)
    return Tensor(a.data * arr, (a,), lambda g: (_unbroadcast(g * arr, a.data.shape),))


def add_const(a: Tensor, arr) -> Tensor:
    arr = np.asarray(arr, dtype=np.float64)
    return Tensor(a.data + arr, (a,), lambda g: (_unbroadcast(g, a.data.shape),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    passthrough = (a.data >= lo) & (a.data <= hi)
    return Tensor(out, (a,), lambda g: (g * passthrough,))


# ------------------------------------------------------------------- linear

def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor(out, (a, b), bwd)


def transpose_last(a: Tensor) -> Tensor:
    return Tensor(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with w of shape (d_in, d_out) and b of shape (d_out,)."""
    out = x.data @ w.data + b.data

    def bwd(g):
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.data.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return gx, gw, gb

    return Tensor(out, (x, w, b), bwd)


# -------------------------------------------------------------- reductions

def sum_last(a: Tensor, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=-1, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, -1)
        # read-only broadcast view is safe: grads are never mutated in place
        return (np.broadcast_to(g, a.data.shape),)

    return Tensor(out, (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return Tensor(a.data.mean(), (a,), lambda g: (np.full(a.data.shape, float(g) / n),))


def sum_all(a: Tensor) -> Tensor:
    return Tensor(a.data.sum(), (a,), lambda g: (np.full(a.data.shape, float(g)),))


def logsumexp(a: Tensor, keepdims: bool = False) -> Tensor:
    """log(sum(exp(a))) along the last axis, numerically stabilized."""
    m = a.data.max(axis=-1, keepdims=True)
    s = np.exp(a.data - m).sum(axis=-1, keepdims=True)
    out = m + np.log(s)
    soft = np.exp(a.data - out)
    if not keepdims:
        out = out[..., 0]

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, -1)
        return (g * soft,)

    return Tensor(out, (a,), bwd)


# ------------------------------------------------------------ shape plumbing

def concat_last(parts: list) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[-1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=-1)

    def bwd(g):
        grads, off = [], 0
        for n in sizes:
            grads.append(g[..., off : off + n])
            off += n
        return tuple(grads)

    return Tensor(out, tuple(parts), bwd)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    out = a.data[..., start:stop]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        return (full,)

    return Tensor(out, (a,), bwd)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def swap_axes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return Tensor(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def take_step(a: Tensor, index: int) -> Tensor:
    """Select one step along the second-to-last axis: (..., L, D) -> (..., D)."""
    out = a.data[..., index, :]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[..., index, :] = g
        return (full,)

    return Tensor(out, (a,), bwd)


def tile_steps(a: Tensor, length: int) -> Tensor:
    """Broadcast (..., D) -> (..., L, D) by repeating along a new step axis."""
    out = np.repeat(np.expand_dims(a.data, -2), length, axis=-2)
    return Tensor(out, (a,), lambda g: (g.sum(axis=-2),))


# ------------------------------------------------------- attention/norm ops

def masked_softmax(a: Tensor, blocked=None) -> Tensor:
    """Row-wise softmax over the last axis; ``blocked`` (True = masked) rows
    get zero weight.  A fully blocked row is rejected."""
    z = a.data
    if blocked is not None:
        blocked = np.asarray(blocked, dtype=bool)
        rows_dead = np.broadcast_to(blocked, z.shape).all(axis=-1)
        if rows_dead.any():
            raise ValueError("attention row fully blocked; softmax undefined")
        z = np.where(blocked, -np.inf, z)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return Tensor(y, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = (x.data - mu) * inv
    out = gain.data * xn + bias.data

    def bwd(g):
        gy = g * gain.data
        gx = inv * (gy - gy.mean(axis=-1, keepdims=True) - xn * (gy * xn).mean(axis=-1, keepdims=True))
        ggain = (g * xn).reshape(-1, x.data.shape[-1]).sum(axis=0)
        gbias = g.reshape(-1, x.data.shape[-1]).sum(axis=0)
        return gx, ggain, gbias

    return Tensor(out, (x, gain, bias), bwd)


def conv1d_causal(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Causal 1-D convolution along the step axis.

    ``x`` is (..., L, C_in), ``w`` is (k, C_in, C_out): output step t sees
    inputs t, t-1, ..., t-k+1 (zero padded before the sequence start).
    """
    k = w.data.shape[0]
    length = x.data.shape[-2]
    out = np.zeros(x.data.shape[:-1] + (w.data.shape[-1],))
    for j in range(k):
        if j == 0:
            out += x.data @ w.data[0]
        else:
            out[..., j:, :] += x.data[..., : length - j, :] @ w.data[j]
    out += b.data

    def bwd(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        c_in, c_out = w.data.shape[1], w.data.shape[2]
        for j in range(k):
            if j == 0:
                gx += g @ w.data[0].T
                gw[0] = x.data.reshape(-1, c_in).T @ g.reshape(-1, c_out)
            else:
                gx[..., : length - j, :] += g[..., j:, :] @ w.data[j].T
                xs = x.data[..., : length - j, :]
                gw[j] = xs.reshape(-1, c_in).T @ g[..., j:, :].reshape(-1, c_out)
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return gx, gw, gb

    return Tensor(out, (x, w, b), bwd)
