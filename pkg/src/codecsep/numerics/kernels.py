"""Conv kernel family shared by both backends.

conv1d here is cross-correlation (no kernel flip). The transposed conv is its
exact adjoint, so the three core routines (forward, grad-input, grad-weight)
also serve as the transposed conv's grad-input, forward, and grad-weight
respectively, with the weight tensor read as (C_in, C_out, K).
"""

import numpy as np

from . import counter
from .backend import backend


def gemm(a, b, label="gemm"):
    # a (m, k) @ b (k, n); every MAC the model performs goes through here or
    # through bmm below, which is what makes the profiler cross-check honest.
    if counter.enabled():
        counter.record(a.shape[0] * a.shape[1] * b.shape[1], label)
    return a @ b


def bmm(a, b, label="gemm"):
    # batched matmul over leading dims
    if counter.enabled():
        batch = int(np.prod(a.shape[:-2], dtype=np.int64))
        counter.record(batch * a.shape[-2] * a.shape[-1] * b.shape[-1], label)
    return np.matmul(a, b)


def conv_out_len(T_in, K, stride, pad):
    return (T_in + 2 * pad - K) // stride + 1


def conv_transpose_out_len(T_in, K, stride, pad):
    return (T_in - 1) * stride - 2 * pad + K


def _pad(x, pad):
    if pad == 0:
        return x
    B, C, T = x.shape
    out = np.zeros((B, C, T + 2 * pad), dtype=x.dtype)
    out[:, :, pad:pad + T] = x
    return out


def conv1d_fwd(x, w, stride, pad, label="conv"):
    # x (B, Ci, Ti), w (Co, Ci, K) -> (B, Co, To)
    B, Ci, Ti = x.shape
    Co, Ciw, K = w.shape
    if Ciw != Ci:
        raise ValueError(f"conv1d: input has {Ci} channels, weight expects {Ciw}")
    if Ti + 2 * pad < K:
        raise ValueError(f"conv1d: input length {Ti} too short for K={K}, pad={pad}")
    cols = backend.im2col(_pad(x, pad), K, stride)  # (B, To, Ci, K)
    To = cols.shape[1]
    y = gemm(cols.reshape(B * To, Ci * K), w.reshape(Co, Ci * K).T, label)
    return np.ascontiguousarray(y.reshape(B, To, Co).transpose(0, 2, 1))


def conv1d_grad_input(gy, w, stride, pad, T_in, label="conv"):
    # gy (B, Co, To), w (Co, Ci, K) -> (B, Ci, T_in)
    B, Co, To = gy.shape
    _, Ci, K = w.shape
    gy_t = np.ascontiguousarray(gy.transpose(0, 2, 1)).reshape(B * To, Co)
    gcols = gemm(gy_t, w.reshape(Co, Ci * K), label).reshape(B, To, Ci, K)
    gxp = backend.col2im(gcols, stride, T_in + 2 * pad)
    return np.ascontiguousarray(gxp[:, :, pad:pad + T_in])


def conv1d_grad_weight(x, gy, stride, pad, K, label="conv"):
    # x (B, Ci, Ti), gy (B, Co, To) -> (Co, Ci, K)
    B, Ci, Ti = x.shape
    _, Co, To = gy.shape
    cols = backend.im2col(_pad(x, pad), K, stride)  # (B, To, Ci, K)
    gy_f = np.ascontiguousarray(gy.transpose(1, 0, 2)).reshape(Co, B * To)
    gw = gemm(gy_f, cols.reshape(B * To, Ci * K), label)
    return gw.reshape(Co, Ci, K)


def conv_transpose1d_fwd(x, w, stride, pad, label="conv"):
    # x (B, Ci, T), w (Ci, Co, K) -> (B, Co, T_out)
    T_out = conv_transpose_out_len(x.shape[2], w.shape[2], stride, pad)
    return conv1d_grad_input(x, w, stride, pad, T_out, label)


def conv_transpose1d_grad_input(gy, w, stride, pad, label="conv"):
    return conv1d_fwd(gy, w, stride, pad, label)


def conv_transpose1d_grad_weight(x, gy, stride, pad, K, label="conv"):
    # returns (Ci, Co, K): the conv grad-weight with input/output roles swapped
    return conv1d_grad_weight(gy, x, stride, pad, K, label)


def snake_fwd(x):
    return backend.snake_fwd(x)


def snake_bwd(x, gy):
    return backend.snake_bwd(x, gy)


def sigmoid_fwd(x):
    return backend.sigmoid_fwd(x)


def sigmoid_bwd(y, gy):
    return backend.sigmoid_bwd(y, gy)
