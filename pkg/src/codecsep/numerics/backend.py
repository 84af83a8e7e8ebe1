"""Kernel backend selection.

Two interchangeable providers implement the packing and elementwise primitives
under the conv kernels: a compiled Cython core and a pure-numpy fallback built
on stride tricks. The GEMM itself is numpy BLAS in both. Selection happens at
import; set CODECSEP_KERNELS=numpy|cython|auto to override (auto prefers the
compiled core when present).

The compiled provider only takes over the packing kernels. Its scalar-loop
snake/sigmoid variants exist in _core and are parity-tested, but numpy's
vectorized transcendentals beat them several-fold on this workload, so both
providers share the numpy elementwise path (measured in
benchmarks/bench_kernels.py).
"""

import os

import numpy as np


class NumpyBackend:
    name = "numpy"

    @staticmethod
    def im2col(xp, K, stride):
        # xp (B, C, Tp) padded; returns (B, To, C, K) contiguous
        win = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)
        cols = win[:, :, ::stride, :].transpose(0, 2, 1, 3)
        return np.ascontiguousarray(cols)

    @staticmethod
    def col2im(gcols, stride, Tp):
        # gcols (B, To, C, K): accumulate overlapping windows into (B, C, Tp).
        # Windows whose start indices differ by ceil(K/stride) strides never
        # overlap, so each phase group is a plain vectorized add.
        B, To, C, K = gcols.shape
        n_ph = -(-K // stride)
        span = n_ph * stride
        out = np.zeros((B, C, Tp + span), dtype=gcols.dtype)
        g = gcols.transpose(0, 2, 1, 3)  # (B, C, To, K)
        for ph in range(n_ph):
            grp = g[:, :, ph::n_ph, :]
            n_g = grp.shape[2]
            if n_g == 0:
                continue
            start = ph * stride
            view = out[:, :, start:start + n_g * span].reshape(B, C, n_g, span)
            view[:, :, :, :K] += grp
        return out[:, :, :Tp]

    @staticmethod
    def snake_fwd(x):
        s = np.sin(x)
        return x + s * s

    @staticmethod
    def snake_bwd(x, gy):
        return gy * (1.0 + np.sin(2.0 * x))

    @staticmethod
    def sigmoid_fwd(x):
        out = np.empty_like(x)
        np.negative(x, out=out)
        np.exp(out, out=out)
        out += 1.0
        np.reciprocal(out, out=out)
        return out

    @staticmethod
    def sigmoid_bwd(y, gy):
        return gy * y * (1.0 - y)


def _load_cython():
    from . import _core

    class CythonBackend:
        name = "cython"
        im2col = staticmethod(_core.im2col)
        col2im = staticmethod(_core.col2im)
        # elementwise stays on numpy SIMD; the compiled scalar loops lose
        snake_fwd = staticmethod(NumpyBackend.snake_fwd)
        snake_bwd = staticmethod(NumpyBackend.snake_bwd)
        sigmoid_fwd = staticmethod(NumpyBackend.sigmoid_fwd)
        sigmoid_bwd = staticmethod(NumpyBackend.sigmoid_bwd)

    return CythonBackend


def _select():
    choice = os.environ.get("CODECSEP_KERNELS", "auto").lower()
    if choice not in ("auto", "numpy", "cython"):
        raise ValueError(f"CODECSEP_KERNELS must be auto|numpy|cython, got {choice!r}")
    if choice == "numpy":
        return NumpyBackend
    try:
        return _load_cython()
    except ImportError:
        if choice == "cython":
            raise
        return NumpyBackend


backend = _select()


def get_backend(name=None):
    """Explicit backend lookup, used by the parity tests and the benchmark."""
    if name is None:
        return backend
    if name == "numpy":
        return NumpyBackend
    if name == "cython":
        return _load_cython()
    raise ValueError(name)
