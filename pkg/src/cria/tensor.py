"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` carrying a
:class:`Node` that links it to its inputs and a closure mapping the output
gradient to input gradients. :func:`backward` orders the reachable nodes into
a :class:`Tape` and replays it in reverse, accumulating into leaf ``grad``
buffers, then releases the nodes.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import (
    DegenerateVarianceError,
    DimensionError,
    NoTapeError,
    OracleError,
    RankError,
)

_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable node recording inside the block (evaluation forwards)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    __slots__ = ("op", "parents", "backward_fn", "out")

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.out = None


class Tensor:
    """A float64 array that optionally participates in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name", "__weakref__")
    __array_priority__ = 100
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self):
        return self.shape[0]

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        node = Node(op, parents, backward_fn)
        node.out = out
        out._node = node
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- binary ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), bw, "div")


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.ndim == 2:
        # weight-style product: fold leading axes into one GEMM
        k, n = b.shape
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (n,))

        def bw(g):
            g2 = g.reshape(-1, n)
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _make(out, (a, b), bw, "matmul")
    try:
        out = a.data @ b.data
    except ValueError:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from None

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "matmul")


def where(cond, a, b):
    """Select from ``a`` where the constant boolean ``cond`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def bw(g):
        return (
            _unbroadcast(np.where(cond, g, 0.0), a.shape),
            _unbroadcast(np.where(cond, 0.0, g), b.shape),
        )

    return _make(out, (a, b), bw, "where")


# ----------------------------------------------------------------- unary ops


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, s):
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,), "scale")


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def square(a):
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def tabs(a):
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def elu(a, alpha=1.0):
    x = a.data
    neg_part = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    return _make(out, (a,), lambda g: (g * np.where(x > 0, 1.0, neg_part + alpha),), "elu")


def softplus(a):
    x = a.data
    out = np.logaddexp(0.0, x)
    return _make(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a):
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def elementwise(op, a, b=None):
    """Dispatch by name: add, mul, scale, elu, exp, neg, abs, square."""
    a = as_tensor(a)
    binary = {"add": add, "mul": mul}
    unary = {"elu": elu, "exp": exp, "neg": neg, "abs": tabs, "square": square}
    if op in binary:
        return binary[op](a, b)
    if op == "scale":
        return scale(a, b)
    if op in unary:
        return unary[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


# --------------------------------------------------------------- reductions


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return scale(tsum(a, axis, keepdims), 1.0 / count)


# ------------------------------------------------------------ shape and index


def reshape(a, shape):
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def broadcast_to(a, shape):
    a = as_tensor(a)
    return _make(
        np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast"
    )


def getitem(a, idx):
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), bw, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


# ---------------------------------------------------------- fused primitives


def softmax(a, axis=-1):
    """Max-subtracted softmax along ``axis``."""
    if a.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis in shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def masked_softmax(a, keep, axis=-1):
    """Softmax over the entries where ``keep`` is true; the rest get weight 0.

    Equal to ``renormalized_mask(softmax(a), keep)`` but computed from the
    logits, so it stays finite when the kept probability mass underflows.
    Rows with nothing kept fall back to the uniform distribution.
    """
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis in shape {a.shape}")
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), a.shape)
    z = np.where(keep, a.data, -np.inf)
    m = z.max(axis=axis, keepdims=True)
    empty = ~np.isfinite(m)
    e = np.where(keep, np.exp(z - np.where(empty, 0.0, m)), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out = np.where(empty, 1.0 / a.shape[axis], e / np.where(empty, 1.0, s))

    def bw(g):
        ga = out * (g - (g * out).sum(axis=axis, keepdims=True))
        return (np.where(empty, 0.0, ga),)

    return _make(out, (a,), bw, "masked_softmax")


def softmax_lastdim(x):
    return softmax(as_tensor(x), axis=-1)


def log_softmax(a, axis=-1):
    if a.shape[axis] == 0:
        raise DimensionError(f"log_softmax over empty axis in shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bw, "log_softmax")


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape[-1] != d or bias.shape[-1] != d:
        raise DimensionError(f"layer_norm params {gain.shape}/{bias.shape} do not match {x.shape}")
    if eps == 0 and d < 2:
        raise DegenerateVarianceError("layer_norm over a single feature with eps=0")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    if eps == 0 and np.any(var == 0):
        raise DegenerateVarianceError("zero-variance row with eps=0")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gx_hat = g * gain.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _make(out, (x, gain, bias), bw, "layer_norm")


def dropout(a, p, rng, training=True):
    """Inverted dropout; the sampled mask is captured by the backward closure."""
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def renormalized_mask(a, keep):
    """Zero entries of the row-stochastic ``a`` where ``keep`` is 0 and renormalize rows.

    Rows whose kept mass is zero fall back to the uniform distribution.
    """
    keep = np.asarray(keep, dtype=np.float64)
    masked = a.data * keep
    s = masked.sum(axis=-1, keepdims=True)
    empty = s <= 0.0
    safe = np.where(empty, 1.0, s)
    t = a.shape[-1]
    out = np.where(empty, 1.0 / t, masked / safe)

    def bw(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        ga = keep * (g - inner) / safe
        return (np.where(empty, 0.0, ga),)

    return _make(out, (a,), bw, "renormalized_mask")


def rotate_pairs(x, cos, sin):
    """Rotate adjacent feature pairs (x[2i], x[2i+1]) by angles given via cos/sin.

    ``cos``/``sin`` broadcast against ``x[..., ::2]``.
    """
    x = as_tensor(x)
    if x.shape[-1] % 2:
        raise DimensionError(f"pair rotation needs an even last axis, got {x.shape}")
    xe, xo = x.data[..., 0::2], x.data[..., 1::2]
    out = np.empty(np.broadcast_shapes(x.shape, np.shape(cos)[:-1] + (x.shape[-1],)))
    out[..., 0::2] = xe * cos - xo * sin
    out[..., 1::2] = xe * sin + xo * cos

    def bw(g):
        ge, go = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        return (_unbroadcast(gx, x.shape),)

    return _make(out, (x,), bw, "rotate_pairs")


# ------------------------------------------------------------------ backward


class Tape:
    """Topologically ordered record of the nodes reachable from a loss."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out):
        order, seen = [], set()
        stack = [(out._node, False)]
        while stack:
            node, expanded = stack.pop()
            if node is None or (id(node) in seen and not expanded):
                continue
            if expanded:
                order.append(node)
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p._node is not None and id(p._node) not in seen:
                    stack.append((p._node, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def replay(self, seed_grad):
        grads = {id(self.nodes[-1].out): seed_grad}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if p._node is None:
                    p.grad = pg.copy() if p.grad is None else p.grad + pg
                else:
                    key = id(p)
                    grads[key] = pg if key not in grads else grads[key] + pg

    def release(self):
        for node in self.nodes:
            node.out._node = None
            node.out.requires_grad = False
            node.parents = ()
        self.nodes = []


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf, consuming the tape."""
    if loss.size != 1:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        if loss.requires_grad:
            one = np.ones_like(loss.data)
            loss.grad = one if loss.grad is None else loss.grad + one
            return
        raise NoTapeError("loss is not attached to a tape (detached or already consumed)")
    tape = Tape.from_output(loss)
    tape.replay(np.ones_like(loss.data))
    tape.release()


def finite_difference_check(f, x, h=1e-5, zero_floor=1e-3):
    """Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).

    ``zero_floor`` lower-bounds the denominator so that coordinates whose true
    gradient is zero compare by absolute error instead of amplifying rounding
    noise; pass 0 for the bare ratio.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(x0.copy(), requires_grad=True)
    out = f(probe)
    if not np.all(np.isfinite(out.data)):
        raise OracleError("function value is not finite at the base point")
    backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(x0)
    central = np.empty_like(x0)
    flat = x0.reshape(-1)
    cflat = central.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f(Tensor(x0)).item()
            flat[i] = old - h
            fm = f(Tensor(x0)).item()
            flat[i] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise OracleError(f"non-finite function value perturbing coordinate {i}")
            cflat[i] = (fp - fm) / (2.0 * h)
    denom = np.maximum(np.abs(analytic) + np.abs(central) + 1e-12, zero_floor)
    return float(np.max(np.abs(analytic - central) / denom)) if x0.size else 0.0
