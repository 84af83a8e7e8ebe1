# Compiled packing and elementwise kernels. Signatures mirror the numpy
# backend exactly; parity is enforced by tests/test_kernels.py.

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expf, sin, sinf

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(xp_arr, int K, int stride):
    if xp_arr.dtype == np.float32:
        return _im2col[float](np.ascontiguousarray(xp_arr), K, stride)
    return _im2col[double](np.ascontiguousarray(xp_arr), K, stride)


cdef _im2col(real[:, :, ::1] xp, int K, int stride):
    cdef Py_ssize_t B = xp.shape[0], C = xp.shape[1], Tp = xp.shape[2]
    cdef Py_ssize_t To = (Tp - K) // stride + 1
    out_arr = np.empty((B, To, C, K), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, t, c, k, base
    for b in range(B):
        for t in range(To):
            base = t * stride
            for c in range(C):
                for k in range(K):
                    out[b, t, c, k] = xp[b, c, base + k]
    return out_arr


def col2im(g_arr, int stride, int Tp):
    if g_arr.dtype == np.float32:
        return _col2im[float](np.ascontiguousarray(g_arr), stride, Tp)
    return _col2im[double](np.ascontiguousarray(g_arr), stride, Tp)


cdef _col2im(real[:, :, :, ::1] g, int stride, int Tp):
    cdef Py_ssize_t B = g.shape[0], To = g.shape[1], C = g.shape[2], K = g.shape[3]
    out_arr = np.zeros((B, C, Tp), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, t, c, k, base
    for b in range(B):
        for t in range(To):
            base = t * stride
            for c in range(C):
                for k in range(K):
                    out[b, c, base + k] += g[b, t, c, k]
    return out_arr


def snake_fwd(x_arr):
    flat = np.ascontiguousarray(x_arr).reshape(-1)
    if x_arr.dtype == np.float32:
        out = _snake_fwd[float](flat)
    else:
        out = _snake_fwd[double](flat)
    return out.reshape(x_arr.shape)


cdef _snake_fwd(real[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n, dtype=np.float32 if real is float else np.float64)
    cdef real[::1] out = out_arr
    cdef real s
    for i in range(n):
        if real is float:
            s = sinf(x[i])
        else:
            s = sin(x[i])
        out[i] = x[i] + s * s
    return out_arr


def snake_bwd(x_arr, gy_arr):
    flat_x = np.ascontiguousarray(x_arr).reshape(-1)
    flat_g = np.ascontiguousarray(gy_arr).reshape(-1)
    if x_arr.dtype == np.float32:
        out = _snake_bwd[float](flat_x, flat_g)
    else:
        out = _snake_bwd[double](flat_x, flat_g)
    return out.reshape(x_arr.shape)


cdef _snake_bwd(real[::1] x, real[::1] gy):
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n, dtype=np.float32 if real is float else np.float64)
    cdef real[::1] out = out_arr
    for i in range(n):
        if real is float:
            out[i] = gy[i] * (1.0 + sinf(2.0 * x[i]))
        else:
            out[i] = gy[i] * (1.0 + sin(2.0 * x[i]))
    return out_arr


def sigmoid_fwd(x_arr):
    flat = np.ascontiguousarray(x_arr).reshape(-1)
    if x_arr.dtype == np.float32:
        out = _sigmoid_fwd[float](flat)
    else:
        out = _sigmoid_fwd[double](flat)
    return out.reshape(x_arr.shape)


cdef _sigmoid_fwd(real[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n, dtype=np.float32 if real is float else np.float64)
    cdef real[::1] out = out_arr
    for i in range(n):
        if real is float:
            out[i] = <float>(1.0 / (1.0 + expf(-x[i])))
        else:
            out[i] = 1.0 / (1.0 + exp(-x[i]))
    return out_arr


def sigmoid_bwd(y_arr, gy_arr):
    flat_y = np.ascontiguousarray(y_arr).reshape(-1)
    flat_g = np.ascontiguousarray(gy_arr).reshape(-1)
    if y_arr.dtype == np.float32:
        out = _sigmoid_bwd[float](flat_y, flat_g)
    else:
        out = _sigmoid_bwd[double](flat_y, flat_g)
    return out.reshape(y_arr.shape)


cdef _sigmoid_bwd(real[::1] y, real[::1] gy):
    cdef Py_ssize_t n = y.shape[0], i
    out_arr = np.empty(n, dtype=np.float32 if real is float else np.float64)
    cdef real[::1] out = out_arr
    for i in range(n):
        out[i] = gy[i] * y[i] * (1.0 - y[i])
    return out_arr
