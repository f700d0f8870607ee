"""Dense float64 tensors with reverse-mode differentiation.

Every op builds its output with :func:`_node`, handing over a closure that maps
the output gradient to one gradient per parent (``None`` where a parent does
not need one). :func:`backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import ConfigError, DegenerateRow, ShapeError

_GRAD_ENABLED = True

NEG_INF = -np.inf


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def power(a, p: float):
    a = as_tensor(a)
    return _node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a):
    a = as_tensor(a)
    pos = a.data > 0
    return _node(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def masked_fill(a, mask, value: float):
    """Replace entries where ``mask`` is true by a constant; no gradient flows there."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    keep = ~mask
    return _node(np.where(mask, value, a.data), (a,),
                 lambda g: (_unbroadcast(g * keep, a.shape),))


# ---------------------------------------------------------------------------
# shape and reductions

def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _node(out, (a,), back)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size // max(np.asarray(a.data.sum(axis=axis)).size, 1)
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def index(a, idx):
    a = as_tensor(a)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)
    return _node(a.data[idx], (a,), back)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def broadcast_to(a, shape):
    a = as_tensor(a)
    return _node(np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, a.shape),))


def embedding(table, ids):
    """Gather rows of ``table`` (V x d) at integer ``ids`` of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def back(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return (out,)
    return _node(table.data[ids], (table,), back)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    """Batched matrix product over the last two axes (numpy broadcasting on the rest)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb
    return _node(out, (a, b), back)


# ---------------------------------------------------------------------------
# normalisation layers

def _stable_softmax(x, axis):
    m = x.max(axis=axis, keepdims=True)
    if np.isneginf(m).any():
        raise DegenerateRow("softmax row with no finite entry")
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis=-1):
    x = as_tensor(x)
    out = _stable_softmax(x.data, axis)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _node(out, (x,), back)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    if np.isneginf(m).any():
        raise DegenerateRow("log_softmax row with no finite entry")
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return _node(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layer_norm(x, gain, bias, eps: float = 1e-5):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def back(g):
        gx = gh = gb = None
        if x.requires_grad:
            gxh = g * gain.data
            gx = inv * (gxh - gxh.mean(axis=-1, keepdims=True)
                        - xhat * (gxh * xhat).mean(axis=-1, keepdims=True))
        if gain.requires_grad:
            gh = _unbroadcast(g * xhat, gain.shape)
        if bias.requires_grad:
            gb = _unbroadcast(g, bias.shape)
        return gx, gh, gb
    return _node(out, (x, gain, bias), back)


def cross_entropy(logits, targets, valid=None):
    """Mean negative log-likelihood of integer ``targets`` over positions where ``valid``."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    valid = np.ones(targets.shape, bool) if valid is None else np.asarray(valid, bool)
    count = int(valid.sum())
    if count == 0:
        raise ShapeError("cross_entropy over zero valid positions")
    m = logits.data.max(axis=-1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * valid).sum() / count

    def back(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return (g * (p - onehot) * (valid[..., None] / count),)
    return _node(np.asarray(loss), (logits,), back)


# ---------------------------------------------------------------------------
# segment ops

def segments_to_ids(segments, length: int) -> np.ndarray:
    """Per-position segment index for a partition of ``[0, length)``; validates it."""
    ids = np.full(length, -1, dtype=np.int64)
    cursor = 0
    for l, (s, e) in enumerate(segments):
        if s != cursor or e <= s:
            raise ShapeError(f"segments must partition [0, {length}) without empty parts")
        ids[s:e] = l
        cursor = e
    if cursor != length:
        raise ShapeError(f"segments must partition [0, {length})")
    return ids


def segment_max_pool(x, segments):
    """Row-wise max over each segment of a ``T x d`` tensor -> ``L x d``."""
    x = as_tensor(x)
    seg = segments_to_ids(segments, x.shape[0])
    return segment_max_pool_ids(x, seg, len(segments))


def segment_max_pool_ids(x, seg_ids, n_segments: int):
    """Batched max pool: ``x`` is ``[..., T, d]``, ``seg_ids`` is ``[..., T]`` with -1 for padding.

    Segments absent from a batch row produce zero rows. Gradient goes to the
    first (lowest-index) maximiser.
    """
    x = as_tensor(x)
    seg_ids = np.asarray(seg_ids)
    lead = x.shape[:-2]
    d = x.shape[-1]
    out = np.zeros(lead + (n_segments, d))
    arg = np.zeros(lead + (n_segments, d), dtype=np.int64)
    present = np.zeros(lead + (n_segments, 1), dtype=bool)
    for l in range(n_segments):
        member = (seg_ids == l)[..., None]
        masked = np.where(member, x.data, -np.inf)
        a = masked.argmax(axis=-2)
        has = member.any(axis=-2)
        arg[..., l, :] = a
        present[..., l, :] = has
        vals = np.take_along_axis(masked, a[..., None, :], axis=-2)[..., 0, :]
        out[..., l, :] = np.where(has, vals, 0.0)

    def back(g):
        gx = np.zeros_like(x.data)
        gm = np.where(present, g, 0.0)
        for l in range(n_segments):
            np.put_along_axis(gx, arg[..., l:l + 1, :],
                              np.take_along_axis(gx, arg[..., l:l + 1, :], axis=-2)
                              + gm[..., l:l + 1, :], axis=-2)
        return (gx,)
    return _node(out, (x,), back)


def segment_softmax(x, onehot, keep):
    """Softmax of ``x[..., T]`` normalised independently inside each segment.

    ``onehot`` is ``[..., T, L]`` segment membership (broadcastable against x),
    ``keep`` is a boolean ``[..., T]`` mask; dropped positions get exactly zero.
    A segment with no kept position yields zeros.
    """
    x = as_tensor(x)
    onehot = np.asarray(onehot, dtype=np.float64)
    keep = np.asarray(keep, dtype=bool)
    member = onehot > 0
    xm = np.where(keep, x.data, -np.inf)
    seg_max = np.where(member, xm[..., None], -np.inf).max(axis=-2)        # [..., L]
    seg_max = np.where(np.isfinite(seg_max), seg_max, 0.0)
    tok_max = (onehot @ seg_max[..., None])[..., 0]                        # [..., T]
    e = np.where(keep, np.exp(np.where(keep, x.data - tok_max, 0.0)), 0.0)
    seg_sum = (e[..., None, :] @ onehot)[..., 0, :]                        # [..., L]
    tok_sum = (onehot @ seg_sum[..., None])[..., 0]
    out = np.where(e > 0, e / np.where(tok_sum > 0, tok_sum, 1.0), 0.0)

    def back(g):
        gy = g * out
        s = (gy[..., None, :] @ onehot)[..., 0, :]
        s_tok = (onehot @ s[..., None])[..., 0]
        return (gy - out * s_tok,)
    return _node(out, (x,), back)


# ---------------------------------------------------------------------------
# stochastic / constant layers

def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None):
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs an explicit generator")
    scale = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.data * scale, (x,), lambda g: (g * scale,))


def sinusoidal_pe(length: int, d: int) -> Tensor:
    if d % 2:
        raise ConfigError(f"positional encoding needs an even width, got {d}")
    pos = np.arange(length)[:, None]
    freq = np.power(10000.0, -np.arange(0, d, 2) / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return Tensor(pe)


# ---------------------------------------------------------------------------
# reverse pass

def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))
