"""Reverse-mode differentiation over numpy values, plus the optimizer and the
finite-difference oracle.

A Node wraps one ndarray and remembers how it was produced; the graph is a
fresh tape every forward pass. backward() walks the tape once in reverse
topological order, accumulating gradients additively across fan-out. Only
the operations the network actually needs exist here, each with a
hand-written adjoint that the finite-difference checker validates.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from . import tensor

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape construction inside the block (evaluation paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    __slots__ = ("value", "grad", "_parents", "_backward", "name")

    def __init__(self, value, parents=(), backward=None, name=""):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def grad_value(self):
        """Gradient as an array; parameters never touched by backward hold zero."""
        if self.grad is None:
            return np.zeros_like(self.value)
        return self.grad

    def detach(self):
        return Node(self.value)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Node(shape={self.value.shape}, dtype={self.value.dtype}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x))


def _accum(node: Node, g):
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


def _make(value, parents, backward):
    """Build an op result; skips the tape entirely under no_grad."""
    if not _grad_enabled:
        return Node(value)
    return Node(value, parents=tuple(parents), backward=backward)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.astype(g.dtype, copy=False)


def backward(loss: Node):
    """Populate .grad on every ancestor of the scalar ``loss``."""
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# Elementwise arithmetic


def add(a, b):
    a, b = as_node(a), as_node(b)
    out = a.value + b.value

    def bwd(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return _make(out, (a, b), bwd)


def sub(a, b):
    a, b = as_node(a), as_node(b)
    out = a.value - b.value

    def bwd(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(-g, b.value.shape))

    return _make(out, (a, b), bwd)


def mul(a, b):
    a, b = as_node(a), as_node(b)
    out = a.value * b.value

    def bwd(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return _make(out, (a, b), bwd)


def div(a, b):
    a, b = as_node(a), as_node(b)
    out = a.value / b.value

    def bwd(g):
        _accum(a, _unbroadcast(g / b.value, a.value.shape))
        _accum(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _make(out, (a, b), bwd)


def exp(x):
    x = as_node(x)
    out = np.exp(x.value)

    def bwd(g):
        _accum(x, g * out)

    return _make(out, (x,), bwd)


def log(x):
    x = as_node(x)
    out = np.log(x.value)

    def bwd(g):
        _accum(x, g / x.value)

    return _make(out, (x,), bwd)


def sqrt(x):
    x = as_node(x)
    out = np.sqrt(x.value)

    def bwd(g):
        _accum(x, g * (0.5 / out))

    return _make(out, (x,), bwd)


def cos(x):
    x = as_node(x)
    out = np.cos(x.value)

    def bwd(g):
        _accum(x, -g * np.sin(x.value))

    return _make(out, (x,), bwd)


def atan2(y, x):
    """Elementwise atan2(y, x). Same shapes required.

    The backward denominator is floored at 1e-12 to keep a zero-length
    vector from producing NaN gradients; the function value there is the
    usual atan2(0, 0) = 0.
    """
    y, x = as_node(y), as_node(x)
    if y.value.shape != x.value.shape:
        raise ValueError(f"atan2 shape mismatch: {y.value.shape} vs {x.value.shape}")
    out = np.arctan2(y.value, x.value)

    def bwd(g):
        denom = np.maximum(y.value * y.value + x.value * x.value, 1e-12)
        _accum(y, g * x.value / denom)
        _accum(x, -g * y.value / denom)

    return _make(out, (y, x), bwd)


def relu(x):
    x = as_node(x)
    out = np.maximum(x.value, 0)

    def bwd(g):
        _accum(x, g * (x.value > 0))

    return _make(out, (x,), bwd)


def silu(x):
    x = as_node(x)
    sig = 1.0 / (1.0 + np.exp(-x.value))
    out = x.value * sig

    def bwd(g):
        _accum(x, g * sig * (1.0 + x.value * (1.0 - sig)))

    return _make(out, (x,), bwd)


def hard_sigmoid(x):
    x = as_node(x)
    out = np.clip((x.value + 3.0) / 6.0, 0.0, 1.0)

    def bwd(g):
        inside = (x.value > -3.0) & (x.value < 3.0)
        _accum(x, g * inside / 6.0)

    return _make(out, (x,), bwd)


def stop_grad(x):
    x = as_node(x)
    return Node(x.value)


# ---------------------------------------------------------------------------
# Shape ops (exact linear permutations/scatters)


def reshape(x, shape):
    x = as_node(x)
    orig = x.value.shape
    out = x.value.reshape(shape)

    def bwd(g):
        _accum(x, g.reshape(orig))

    return _make(out, (x,), bwd)


def transpose(x, axes):
    x = as_node(x)
    inv = np.argsort(axes)
    out = x.value.transpose(axes)

    def bwd(g):
        _accum(x, g.transpose(inv))

    return _make(out, (x,), bwd)


def take_stride(x, axis, start, step):
    """Strided slice x[..., start::step, ...] along one axis."""
    x = as_node(x)
    sl = [slice(None)] * x.value.ndim
    sl[axis] = slice(start, None, step)
    sl = tuple(sl)
    out = np.ascontiguousarray(x.value[sl])

    def bwd(g):
        gx = np.zeros_like(x.value)
        gx[sl] = g
        _accum(x, gx)

    return _make(out, (x,), bwd)


def stack_orientations(nodes):
    """[N x (B, F, H, W)] -> (B, F*N, H, W) with channel c = f*N + o."""
    nodes = [as_node(n) for n in nodes]
    vals = [n.value for n in nodes]
    B, F = vals[0].shape[:2]
    N = len(vals)
    out = np.stack(vals, axis=2).reshape(B, F * N, *vals[0].shape[2:])

    def bwd(g):
        gs = g.reshape(B, F, N, *vals[0].shape[2:])
        for o, n in enumerate(nodes):
            _accum(n, np.ascontiguousarray(gs[:, :, o]))

    return _make(out, tuple(nodes), bwd)


def repeat_fields(x, n):
    """Repeat each entry of the trailing axis n consecutive times.

    (…, F) -> (…, F*n); entry f lands at positions f*n .. f*n+n-1, matching
    the channel convention c = f*N + o.
    """
    x = as_node(x)
    out = np.repeat(x.value, n, axis=-1)

    def bwd(g):
        _accum(x, g.reshape(*x.value.shape, n).sum(axis=-1))

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# Reductions


def sum_(x, axis=None, keepdims=False):
    x = as_node(x)
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.value.shape).copy())
            return
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            shape = list(x.value.shape)
            for a in axes:
                shape[a % x.value.ndim] = 1
            g = g.reshape(shape)
        _accum(x, np.broadcast_to(g, x.value.shape).copy())

    return _make(out, (x,), bwd)


def mean(x, axis=None, keepdims=False):
    x = as_node(x)
    if axis is None:
        n = x.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for a in axes:
            n *= x.value.shape[a % x.value.ndim]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def ordered_sum(x, axis):
    """Sum over the given axes with ascending-sorted operands.

    Bitwise invariant under any permutation of the reduced block; the
    gradient is the plain broadcast of the upstream gradient (order has no
    effect on d(sum)/dx).
    """
    x = as_node(x)
    out = tensor.ordered_sum(x.value, axis)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % x.value.ndim for a in axes)

    def bwd(g):
        shape = [1 if a in axes else s for a, s in enumerate(x.value.shape)]
        _accum(x, np.broadcast_to(g.reshape(shape), x.value.shape).copy())

    return _make(out, (x,), bwd)


def reduce_max(x, axis):
    """Max over one axis; gradient routes to the first argmax (ties)."""
    x = as_node(x)
    out = x.value.max(axis=axis)
    idx = np.expand_dims(x.value.argmax(axis=axis), axis)

    def bwd(g):
        gx = np.zeros_like(x.value)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis)
        _accum(x, gx)

    return _make(out, (x,), bwd)


def sort_last(x):
    """Ascending stable sort along the last axis.

    Backward scatters the gradient back through the (stable) permutation, so
    ties route deterministically.
    """
    x = as_node(x)
    order = np.argsort(x.value, axis=-1, kind="stable")
    out = np.take_along_axis(x.value, order, axis=-1)

    def bwd(g):
        gx = np.zeros_like(x.value)
        np.put_along_axis(gx, order, g, axis=-1)
        _accum(x, gx)

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# Linear algebra / convolution


def matmul(a, b):
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul is 2D only")
    out = a.value @ b.value

    def bwd(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return _make(out, (a, b), bwd)


def conv2d(x, w, stride=1, padding=0):
    """NCHW convolution node; gradients flow to both input and kernel."""
    x, w = as_node(x), as_node(w)
    out, cols = tensor._conv2d_with_cols(x.value, w.value, stride, padding)

    def bwd(g):
        dx, dw = tensor.conv2d_backward(x.value, w.value, cols, g, stride, padding)
        _accum(x, dx)
        _accum(w, dw)

    return _make(out, (x, w), bwd)


# ---------------------------------------------------------------------------
# Composites


def softmax(x, axis=-1):
    shifted = sub(x, stop_grad(Node(x.value.max(axis=axis, keepdims=True))))
    e = exp(shifted)
    return div(e, sum_(e, axis=axis, keepdims=True))


def cross_entropy(logits: Node, labels: np.ndarray) -> Node:
    """Mean negative log-likelihood; labels are integer class indices."""
    n, k = logits.value.shape
    shifted = sub(logits, stop_grad(Node(logits.value.max(axis=1, keepdims=True))))
    lse = log(sum_(exp(shifted), axis=1, keepdims=True))
    logp = sub(shifted, lse)
    onehot = np.zeros((n, k), dtype=logits.value.dtype)
    onehot[np.arange(n), labels] = 1.0
    return mul(sum_(mul(logp, onehot)), -1.0 / n)


def angular_cosine_loss(theta_hat: Node, theta_true: np.ndarray) -> Node:
    """mean(1 - cos(theta_hat - theta_true)); angles in radians."""
    d = sub(theta_hat, Node(theta_true))
    return mean(sub(1.0, cos(d)))


# ---------------------------------------------------------------------------
# Optimizer


class AdamW:
    """Adam with decoupled weight decay.

    The decay term is applied directly to the parameter and never enters the
    moment estimates. Defaults: lr 2.5e-4, betas (0.9, 0.999), wd 0.05.
    """

    def __init__(self, params: dict, lr=2.5e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.05):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad_value()
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                p.value -= self.lr * self.weight_decay * p.value
            p.value -= self.lr * update

    def state_dict(self) -> dict:
        out = {"t": np.array([self.t], dtype=np.int64)}
        for k in self.params:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_state_dict(self, state: dict):
        self.t = int(state["t"][0])
        for k in self.params:
            self.m[k] = state[f"m/{k}"].copy()
            self.v[k] = state[f"v/{k}"].copy()


def cosine_lr(base: float, epoch: int, total_epochs: int, floor_frac: float = 1 / 20):
    """Constant for the first half of training, cosine decay to
    base*floor_frac at the final epoch over the second half."""
    if total_epochs <= 1:
        return base
    half = total_epochs / 2.0
    if epoch < half:
        return base
    span = max(total_epochs - 1 - half, 1e-9)
    prog = min((epoch - half) / span, 1.0)
    return base * (floor_frac + (1.0 - floor_frac) * 0.5 * (1.0 + math.cos(math.pi * prog)))


# ---------------------------------------------------------------------------
# Finite-difference oracle


def finite_diff_check(f, inputs, eps=1e-3):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a list of Nodes to a scalar Node; ``inputs`` are float64
    arrays. Relative error per element is |a - cd| / (|a| + |cd| + 1e-8).
    """
    nodes = [Node(np.asarray(x, dtype=np.float64)) for x in inputs]
    loss = f(*nodes)
    backward(loss)
    analytic = [n.grad_value().copy() for n in nodes]

    worst = 0.0
    for which, x in enumerate(inputs):
        base = np.asarray(x, dtype=np.float64)
        flat = base.reshape(-1)
        for i in range(flat.size):
            for sgn in (+1.0, -1.0):
                pert = base.copy().reshape(-1)
                pert[i] += sgn * eps
                args = [
                    Node(pert.reshape(base.shape)) if j == which
                    else Node(np.asarray(inputs[j], dtype=np.float64))
                    for j in range(len(inputs))
                ]
                with no_grad():
                    val = float(f(*args).value)
                if sgn > 0:
                    plus = val
                else:
                    minus = val
            cd = (plus - minus) / (2.0 * eps)
            a = float(analytic[which].reshape(-1)[i])
            rel = abs(a - cd) / (abs(a) + abs(cd) + 1e-8)
            worst = max(worst, rel)
    return worst
