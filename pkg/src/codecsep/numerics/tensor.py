"""Reverse-mode autodiff over numpy arrays.

A Tensor records the op that produced it as a backward closure plus parent
references; backward() walks the tape in reverse topological order from a
scalar loss. Ops gate every gradient component on the parent's requires_grad,
so frozen parameters (the codec during masker training) cost nothing beyond
the grad-input path through them.

Elementwise ops follow numpy broadcasting; their backward sums the gradient
back down to each parent's shape.
"""

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self):
        """Populate gradients of everything reachable from this scalar.

        Intermediate grads are dropped once consumed; leaf grads accumulate
        across calls until zeroed by the owner.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            return
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad:
                    stack.append((p, False))
        if self.grad is None:
            self.grad = np.ones_like(self.data)
        else:
            self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
                node.grad = None  # interior node: free it, keep leaves


def _acc(t, g, fresh=False):
    if t.grad is None:
        t.grad = g if fresh else g.copy()
    else:
        t.grad += g


def _wrap(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def tensor(data, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype))


def parameter(data):
    return Tensor(np.asarray(data), requires_grad=True)


def _result(data, parents, backward):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    # sum gradient down to `shape` after numpy broadcasting
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _wrap(a), _wrap(b, a)
    out = a.data + b.data

    def bwd(gy):
        if a.requires_grad:
            _acc(a, _unbroadcast(gy, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(gy, b.shape))

    return _result(out, (a, b), bwd)


def sub(a, b):
    a, b = _wrap(a), _wrap(b, a)
    out = a.data - b.data

    def bwd(gy):
        if a.requires_grad:
            _acc(a, _unbroadcast(gy, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(-gy, b.shape), fresh=True)

    return _result(out, (a, b), bwd)


def mul(a, b):
    a, b = _wrap(a), _wrap(b, a)
    out = a.data * b.data

    def bwd(gy):
        if a.requires_grad:
            _acc(a, _unbroadcast(gy * b.data, a.shape), fresh=True)
        if b.requires_grad:
            _acc(b, _unbroadcast(gy * a.data, b.shape), fresh=True)

    return _result(out, (a, b), bwd)


def div(a, b):
    a, b = _wrap(a), _wrap(b, a)
    out = a.data / b.data

    def bwd(gy):
        if a.requires_grad:
            _acc(a, _unbroadcast(gy / b.data, a.shape), fresh=True)
        if b.requires_grad:
            _acc(b, _unbroadcast(-gy * out / b.data, b.shape), fresh=True)

    return _result(out, (a, b), bwd)


def scale(a, s):
    s = float(s)
    out = a.data * s

    def bwd(gy):
        if a.requires_grad:
            _acc(a, gy * s, fresh=True)

    return _result(out, (a,), bwd)


def add_scalar(a, s):
    out = a.data + float(s)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, gy)

    return _result(out, (a,), bwd)


def snake(a):
    out = kernels.snake_fwd(a.data)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, kernels.snake_bwd(a.data, gy), fresh=True)

    return _result(out, (a,), bwd)


def sigmoid(a):
    out = kernels.sigmoid_fwd(a.data)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, kernels.sigmoid_bwd(out, gy), fresh=True)

    return _result(out, (a,), bwd)


def tanh(a):
    out = np.tanh(a.data)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, gy * (1.0 - out * out), fresh=True)

    return _result(out, (a,), bwd)


def exp(a):
    out = np.exp(a.data)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, gy * out, fresh=True)

    return _result(out, (a,), bwd)


def log(a):
    out = np.log(a.data)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, gy / a.data, fresh=True)

    return _result(out, (a,), bwd)


def sqrt(a):
    out = np.sqrt(a.data)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, gy * (0.5 / out), fresh=True)

    return _result(out, (a,), bwd)


def square(a):
    out = a.data * a.data

    def bwd(gy):
        if a.requires_grad:
            _acc(a, gy * (2.0 * a.data), fresh=True)

    return _result(out, (a,), bwd)


def abs_(a):
    out = np.abs(a.data)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, gy * np.sign(a.data), fresh=True)

    return _result(out, (a,), bwd)


def straight_through(value, node):
    """Forward takes `value` verbatim; backward passes gradients to `node`
    unchanged. Shapes must agree."""
    data = np.asarray(value, dtype=node.dtype)
    if data.shape != node.shape:
        raise ValueError(f"straight_through: {data.shape} vs {node.shape}")

    def bwd(gy):
        if node.requires_grad:
            _acc(node, gy)

    return _result(data, (node,), bwd)


def stop_grad(a):
    return Tensor(a.data)


# ---------------------------------------------------------------- reductions

def sum_all(a):
    out = np.asarray(a.data.sum(), dtype=a.dtype)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, np.broadcast_to(gy, a.shape).astype(a.dtype, copy=True), fresh=True)

    return _result(out, (a,), bwd)


def mean_all(a):
    n = a.size
    out = np.asarray(a.data.mean(), dtype=a.dtype)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, np.full(a.shape, float(gy) / n, dtype=a.dtype), fresh=True)

    return _result(out, (a,), bwd)


def sum_lastdim(a):
    out = a.data.sum(axis=-1)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, np.repeat(gy[..., None], a.shape[-1], axis=-1), fresh=True)

    return _result(out, (a,), bwd)


def mean_axis0(a):
    n = a.shape[0]
    out = a.data.mean(axis=0)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, np.broadcast_to(gy / n, a.shape).astype(a.dtype, copy=True), fresh=True)

    return _result(out, (a,), bwd)


def sub_mean_lastdim(a):
    out = a.data - a.data.mean(axis=-1, keepdims=True)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, gy - gy.mean(axis=-1, keepdims=True), fresh=True)

    return _result(out, (a,), bwd)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b, label="gemm"):
    out = kernels.gemm(a.data, b.data, label)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, kernels.gemm(gy, b.data.T, label), fresh=True)
        if b.requires_grad:
            _acc(b, kernels.gemm(a.data.T, gy, label), fresh=True)

    return _result(out, (a, b), bwd)


def bmm(a, b, label="gemm"):
    out = kernels.bmm(a.data, b.data, label)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, kernels.bmm(gy, b.data.swapaxes(-1, -2), label), fresh=True)
        if b.requires_grad:
            _acc(b, kernels.bmm(a.data.swapaxes(-1, -2), gy, label), fresh=True)

    return _result(out, (a, b), bwd)


# ---------------------------------------------------------------- convolution

def conv1d(x, w, bias=None, stride=1, pad=0, label="conv"):
    y = kernels.conv1d_fwd(x.data, w.data, stride, pad, label)
    if bias is not None:
        y += bias.data.reshape(1, -1, 1)
    parents = (x, w) if bias is None else (x, w, bias)

    def bwd(gy):
        if w.requires_grad:
            _acc(w, kernels.conv1d_grad_weight(x.data, gy, stride, pad, w.shape[2], label),
                 fresh=True)
        if bias is not None and bias.requires_grad:
            _acc(bias, gy.sum(axis=(0, 2)), fresh=True)
        if x.requires_grad:
            _acc(x, kernels.conv1d_grad_input(gy, w.data, stride, pad, x.shape[2], label),
                 fresh=True)

    return _result(y, parents, bwd)


def conv_transpose1d(x, w, bias=None, stride=1, pad=0, label="conv"):
    # w (C_in, C_out, K)
    y = kernels.conv_transpose1d_fwd(x.data, w.data, stride, pad, label)
    if bias is not None:
        y += bias.data.reshape(1, -1, 1)
    parents = (x, w) if bias is None else (x, w, bias)

    def bwd(gy):
        if w.requires_grad:
            _acc(w, kernels.conv_transpose1d_grad_weight(x.data, gy, stride, pad,
                                                         w.shape[2], label), fresh=True)
        if bias is not None and bias.requires_grad:
            _acc(bias, gy.sum(axis=(0, 2)), fresh=True)
        if x.requires_grad:
            _acc(x, kernels.conv_transpose1d_grad_input(gy, w.data, stride, pad, label),
                 fresh=True)

    return _result(y, parents, bwd)


# ---------------------------------------------------------------- normalization, attention pieces

def softmax_lastdim(a):
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(gy):
        if a.requires_grad:
            dot = (gy * out).sum(axis=-1, keepdims=True)
            _acc(a, out * (gy - dot), fresh=True)

    return _result(out, (a,), bwd)


def layernorm(x, gamma, beta, eps=1e-5):
    # x (B, C, T) normalized over the channel axis per (b, t)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data.reshape(1, -1, 1) + beta.data.reshape(1, -1, 1)

    def bwd(gy):
        if gamma.requires_grad:
            _acc(gamma, (gy * xhat).sum(axis=(0, 2)), fresh=True)
        if beta.requires_grad:
            _acc(beta, gy.sum(axis=(0, 2)), fresh=True)
        if x.requires_grad:
            gxh = gy * gamma.data.reshape(1, -1, 1)
            m1 = gxh.mean(axis=1, keepdims=True)
            m2 = (gxh * xhat).mean(axis=1, keepdims=True)
            _acc(x, inv * (gxh - m1 - xhat * m2), fresh=True)

    return _result(out, (x, gamma, beta), bwd)


def embedding(table, idx):
    idx = np.asarray(idx, dtype=np.int64)
    out = table.data[idx]

    def bwd(gy):
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, idx, gy)
            _acc(table, g, fresh=True)

    return _result(out, (table,), bwd)


def stack_rows(ts):
    """Stack same-shape tensors along a new leading axis."""
    out = np.stack([t.data for t in ts])

    def bwd(gy):
        for i, t in enumerate(ts):
            if t.requires_grad:
                _acc(t, gy[i])

    return _result(out, ts, bwd)


def l2_normalize(v, eps=1e-12):
    # v is a flat vector
    n = float(np.sqrt(v.data @ v.data) + eps)
    out = v.data / n

    def bwd(gy):
        if v.requires_grad:
            _acc(v, (gy - out * (out @ gy)) / n, fresh=True)

    return _result(out, (v,), bwd)


# ---------------------------------------------------------------- shape ops

def reshape(a, shape):
    out = a.data.reshape(shape)

    def bwd(gy):
        if a.requires_grad:
            _acc(a, gy.reshape(a.shape))

    return _result(out, (a,), bwd)


def transpose(a, axes):
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))

    def bwd(gy):
        if a.requires_grad:
            _acc(a, np.ascontiguousarray(gy.transpose(inv)), fresh=True)

    return _result(out, (a,), bwd)


def narrow(a, axis, start, length):
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = np.ascontiguousarray(a.data[sl])

    def bwd(gy):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[sl] = gy
            _acc(a, g, fresh=True)

    return _result(out, (a,), bwd)


def frame(a, win, hop):
    # a (B, N) -> (B, F, win); the backward is overlap-add
    B, N = a.shape
    if N < win:
        raise ValueError(f"frame: signal length {N} < window {win}")
    cols = kernels.backend.im2col(a.data[:, None, :], win, hop)  # (B, F, 1, win)
    out = np.ascontiguousarray(cols[:, :, 0, :])

    def bwd(gy):
        if a.requires_grad:
            g = kernels.backend.col2im(gy[:, :, None, :], hop, N)
            _acc(a, g[:, 0, :], fresh=True)

    return _result(out, (a,), bwd)
