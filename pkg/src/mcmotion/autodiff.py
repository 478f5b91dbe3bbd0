"""Small reverse-mode autodiff tape over numpy arrays.

Only the operations the denoiser needs are implemented. Every op is
deterministic, works in float32 or float64, and supports numpy-style
broadcasting; gradients of broadcast operands are reduced back to the
operand shape. The fused attention op dispatches to mcmotion.kernels so
the compiled kernel and the numpy fallback share one graph node.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    """A node in the computation graph wrapping an ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        # grads are rebound, never mutated in place, so holding a view is safe
        if self.grad is None:
            self.grad = g if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Backpropagate from this node. Defaults to d(self)/d(self) = 1."""
        if grad is None:
            grad = np.ones_like(self.data)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(_toposort(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def _toposort(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast up from `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _operand(x):
    """Python scalars stay raw so numpy's weak promotion keeps the dtype."""
    if isinstance(x, Tensor):
        return x, x.data
    if isinstance(x, (int, float)):
        return None, x
    t = Tensor(x)
    return t, t.data


def add(a, b) -> Tensor:
    at, ad_ = _operand(a)
    bt, bd = _operand(b)
    parents = tuple(t for t in (at, bt) if t is not None)
    out = Tensor(ad_ + bd, _parents=parents)

    def _bw(g):
        if at is not None and at.requires_grad:
            at._accumulate(_unbroadcast(g, at.data.shape))
        if bt is not None and bt.requires_grad:
            bt._accumulate(_unbroadcast(g, bt.data.shape))

    out._backward = _bw
    return out


def sub(a, b) -> Tensor:
    at, ad_ = _operand(a)
    bt, bd = _operand(b)
    parents = tuple(t for t in (at, bt) if t is not None)
    out = Tensor(ad_ - bd, _parents=parents)

    def _bw(g):
        if at is not None and at.requires_grad:
            at._accumulate(_unbroadcast(g, at.data.shape))
        if bt is not None and bt.requires_grad:
            bt._accumulate(_unbroadcast(-g, bt.data.shape))

    out._backward = _bw
    return out


def mul(a, b) -> Tensor:
    at, ad_ = _operand(a)
    bt, bd = _operand(b)
    parents = tuple(t for t in (at, bt) if t is not None)
    out = Tensor(ad_ * bd, _parents=parents)

    def _bw(g):
        if at is not None and at.requires_grad:
            at._accumulate(_unbroadcast(g * bd, at.data.shape))
        if bt is not None and bt.requires_grad:
            bt._accumulate(_unbroadcast(g * ad_, bt.data.shape))

    out._backward = _bw
    return out


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def _bw(g):
        # common layer pattern: stacked activations against a 2-d weight;
        # collapse to single GEMMs instead of stacked matmuls plus reduce
        if b.data.ndim == 2 and a.data.ndim > 2:
            if a.requires_grad:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.data.shape)
                a._accumulate(ga)
            if b.requires_grad:
                gb = a.data.reshape(-1, a.data.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                b._accumulate(gb)
            return
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    out._backward = _bw
    return out


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = astensor(a)
    out = Tensor(np.swapaxes(a.data, ax1, ax2), _parents=(a,))

    def _bw(g):
        a._accumulate(np.swapaxes(g, ax1, ax2))

    out._backward = _bw
    return out


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    src = a.data.shape
    out = Tensor(a.data.reshape(shape), _parents=(a,))

    def _bw(g):
        a._accumulate(g.reshape(src))

    out._backward = _bw
    return out


def take(a, idx) -> Tensor:
    """Basic/advanced indexing with scatter-add backward."""
    a = astensor(a)
    out = Tensor(a.data[idx], _parents=(a,))

    def _bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    out._backward = _bw
    return out


def concat(parts, axis: int = -1) -> Tensor:
    parts = [astensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), _parents=tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]

    def _bw(g):
        offs = np.cumsum([0] + sizes)
        for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accumulate(g[tuple(sl)])

    out._backward = _bw
    return out


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,))

    def _bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    out._backward = _bw
    return out


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def square(a) -> Tensor:
    a = astensor(a)
    return mul(a, a)


def exp(a) -> Tensor:
    a = astensor(a)
    y = np.exp(a.data)
    out = Tensor(y, _parents=(a,))

    def _bw(g):
        a._accumulate(g * y)

    out._backward = _bw
    return out


def tanh(a) -> Tensor:
    a = astensor(a)
    y = np.tanh(a.data)
    out = Tensor(y, _parents=(a,))

    def _bw(g):
        a._accumulate(g * (1.0 - y * y))

    out._backward = _bw
    return out


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a) -> Tensor:
    """Smooth GELU (tanh form), fused to limit temporary traffic."""
    a = astensor(a)
    x = a.data
    x2 = x * x
    u = x2 * x
    u *= 0.044715
    u += x
    u *= _GELU_C
    t = np.tanh(u, out=u)
    y = t + 1.0
    y *= x
    y *= 0.5
    out = Tensor(y, _parents=(a,))

    def _bw(g):
        d = x2 * 0.134145
        d += 1.0
        d *= _GELU_C  # d/dx of the tanh argument
        w = t * t
        np.subtract(1.0, w, out=w)
        w *= d
        w *= x
        w += t
        w += 1.0
        w *= 0.5
        w *= g
        a._accumulate(w)

    out._backward = _bw
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with learned gain/bias."""
    x, gain, bias = astensor(x), astensor(gain), astensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xhat = x.data - mu
    var = np.mean(xhat * xhat, axis=-1, keepdims=True)
    var += eps
    inv = 1.0 / np.sqrt(var, out=var)
    xhat *= inv
    y = xhat * gain.data
    y += bias.data
    out = Tensor(y, _parents=(x, gain, bias))

    def _bw(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            gh = g * gain.data
            # d/dx of (x - mu) / sqrt(var + eps), reusing the gh buffer
            m2 = np.mean(gh * xhat, axis=-1, keepdims=True)
            gh -= gh.mean(axis=-1, keepdims=True)
            gh -= xhat * m2
            gh *= inv
            x._accumulate(gh)

    out._backward = _bw
    return out


def softmax(x, axis: int = -1) -> Tensor:
    x = astensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, _parents=(x,))

    def _bw(g):
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    out._backward = _bw
    return out


def attention(q, k, v, scale: float, key_mask=None) -> Tensor:
    """Fused softmax(q @ k^T * scale) @ v over stacked leading dims.

    q: (..., n, c), k: (..., m, c), v: (..., m, p); key_mask is an
    optional (..., m) boolean array, False marks padded keys. The numpy
    backend consumes the broadcastable arrays as-is; the compiled
    kernel needs contiguous 3-d stacks, so it gets flattened copies.
    """
    q, k, v = astensor(q), astensor(k), astensor(v)
    lead = q.data.shape[:-2]
    n, c = q.data.shape[-2:]
    m, p = v.data.shape[-2:]
    if kernels.NEEDS_CONTIGUOUS:
        h = int(np.prod(lead)) if lead else 1
        qk = np.ascontiguousarray(q.data.reshape(h, n, c))
        kk = np.ascontiguousarray(k.data.reshape(h, m, c))
        vk = np.ascontiguousarray(v.data.reshape(h, m, p))
        mk = None
        if key_mask is not None:
            mk = np.ascontiguousarray(np.broadcast_to(key_mask, lead + (m,)).reshape(h, m).astype(np.uint8))
        out_k, probs = kernels.attn_forward(qk, kk, vk, scale, mk)
        out = Tensor(out_k.reshape(lead + (n, p)), _parents=(q, k, v))
    else:
        qk, kk, vk = q.data, k.data, v.data
        mk = None if key_mask is None else np.asarray(key_mask, dtype=bool)
        out_k, probs = kernels.attn_forward(qk, kk, vk, scale, mk)
        out = Tensor(out_k, _parents=(q, k, v))

    def _bw(g):
        if kernels.NEEDS_CONTIGUOUS:
            g = np.ascontiguousarray(g.reshape(qk.shape[0], n, p))
        gq, gk, gv = kernels.attn_backward(g, qk, kk, vk, probs, scale)
        if q.requires_grad:
            q._accumulate(gq.reshape(q.data.shape))
        if k.requires_grad:
            k._accumulate(gk.reshape(k.data.shape))
        if v.requires_grad:
            v._accumulate(gv.reshape(v.data.shape))

    out._backward = _bw
    return out


def embedding(table, ids) -> Tensor:
    """Row gather from an embedding table; ids is any integer array."""
    table = astensor(table)
    ids = np.asarray(ids)
    out = Tensor(table.data[ids], _parents=(table,))

    def _bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table._accumulate(full)

    out._backward = _bw
    return out
