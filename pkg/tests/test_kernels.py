"""Convolution kernel oracles: nested-loop reference vs the GEMM route."""

import numpy as np
import pytest

from codecsep.numerics import counter, get_backend, kernels
from codecsep.numerics.backend import backend


def conv_oracle(x, w, bias, stride, pad):
    """Direct cross-correlation, loops only. Zero padding outside bounds."""
    B, Ci, Ti = x.shape
    Co, _, K = w.shape
    To = (Ti + 2 * pad - K) // stride + 1
    y = np.zeros((B, Co, To), dtype=x.dtype)
    for b in range(B):
        for co in range(Co):
            for to in range(To):
                acc = 0.0 if bias is None else bias[co]
                for ci in range(Ci):
                    for k in range(K):
                        ti = to * stride + k - pad
                        if 0 <= ti < Ti:
                            acc += x[b, ci, ti] * w[co, ci, k]
                y[b, co, to] = acc
    return y


def convt_oracle(x, w, bias, stride, pad):
    """Direct transposed conv by scatter. Weight layout (C_in, C_out, K)."""
    B, Ci, Ti = x.shape
    _, Co, K = w.shape
    To = (Ti - 1) * stride + K - 2 * pad
    y = np.zeros((B, Co, To), dtype=x.dtype)
    for b in range(B):
        for ci in range(Ci):
            for ti in range(Ti):
                for co in range(Co):
                    for k in range(K):
                        t = ti * stride + k - pad
                        if 0 <= t < To:
                            y[b, co, t] += x[b, ci, ti] * w[ci, co, k]
    if bias is not None:
        y += bias[None, :, None]
    return y


def test_conv1d_matches_nested_loop_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 2, 20))
    w = rng.standard_normal((3, 2, 5))
    for stride, pad in [(1, 0), (1, 2), (2, 2), (4, 1), (2, 0)]:
        got = kernels.conv1d_fwd(x, w, stride, pad)
        want = conv_oracle(x, w, None, stride, pad)
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) < 1e-12


def test_conv1d_identity_and_adjacent_sum():
    x = np.arange(1.0, 7.0).reshape(1, 1, 6)
    w2 = np.array([[[2.0]]])
    assert np.array_equal(kernels.conv1d_fwd(x, w2, 1, 0), 2.0 * x)
    wsum = np.array([[[1.0, 1.0]]])
    got = kernels.conv1d_fwd(x, wsum, 1, 0)
    assert np.array_equal(got[0, 0], np.array([3.0, 5.0, 7.0, 9.0, 11.0]))


def test_conv_transpose1d_matches_nested_loop_oracle():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 3, 7))
    w = rng.standard_normal((3, 2, 4))
    for stride, pad in [(1, 0), (2, 1), (4, 2), (2, 0)]:
        got = kernels.conv_transpose1d_fwd(x, w, stride, pad)
        want = convt_oracle(x, w, None, stride, pad)
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) < 1e-12


@pytest.mark.parametrize("t_in,k,stride,pad", [
    (16, 4, 2, 1), (16, 8, 4, 2), (250, 7, 1, 3), (9, 3, 1, 1),
    (32, 2, 2, 0), (100, 16, 8, 4),
])
def test_length_formulas_match_actual_shapes(t_in, k, stride, pad):
    x = np.zeros((1, 1, t_in))
    w = np.zeros((1, 1, k))
    y = kernels.conv1d_fwd(x, w, stride, pad)
    assert y.shape[2] == kernels.conv_out_len(t_in, k, stride, pad)
    wt = np.zeros((1, 1, k))
    yt = kernels.conv_transpose1d_fwd(x, wt, stride, pad)
    assert yt.shape[2] == kernels.conv_transpose_out_len(t_in, k, stride, pad)


def test_strided_downsample_exactly_inverts_length():
    # the codec relies on k = 2s, p = s/2 halving/doubling T exactly
    for s in (2, 4, 8):
        t = 64
        down = kernels.conv_out_len(t, 2 * s, s, s // 2)
        assert down == t // s
        up = kernels.conv_transpose_out_len(down, 2 * s, s, s // 2)
        assert up == t


def test_grad_input_is_adjoint_of_forward():
    # <conv(x), gy> == <x, grad_input(gy)> for any gy: exact adjoint pair
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 3, 21))
    w = rng.standard_normal((4, 3, 5))
    for stride, pad in [(1, 2), (2, 2), (3, 1)]:
        y = kernels.conv1d_fwd(x, w, stride, pad)
        gy = rng.standard_normal(y.shape)
        gx = kernels.conv1d_grad_input(gy, w, stride, pad, x.shape[2])
        assert gx.shape == x.shape
        lhs = float(np.sum(y * gy))
        rhs = float(np.sum(x * gx))
        assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))


def test_grad_weight_matches_finite_differences():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((1, 2, 12))
    w = rng.standard_normal((2, 2, 3))
    gy_shape = kernels.conv1d_fwd(x, w, 2, 1).shape
    gy = rng.standard_normal(gy_shape)
    gw = kernels.conv1d_grad_weight(x, gy, 2, 1, w.shape[2])
    eps = 1e-6
    for idx in np.ndindex(w.shape):
        wp = w.copy(); wp[idx] += eps
        wm = w.copy(); wm[idx] -= eps
        fp = np.sum(kernels.conv1d_fwd(x, wp, 2, 1) * gy)
        fm = np.sum(kernels.conv1d_fwd(x, wm, 2, 1) * gy)
        fd = (fp - fm) / (2 * eps)
        assert abs(gw[idx] - fd) < 1e-7


def test_backend_parity_numpy_vs_compiled():
    py = get_backend("numpy")
    active = backend
    if active.name == "numpy":
        pytest.skip("compiled backend unavailable")
    rng = np.random.default_rng(11)
    for dtype in (np.float32, np.float64):
        x = rng.standard_normal((3, 5, 40)).astype(dtype)
        xp = np.pad(x, ((0, 0), (0, 0), (2, 2)))
        a = active.im2col(xp, 5, 2)
        b = py.im2col(xp, 5, 2)
        assert a.shape == b.shape and np.array_equal(a, b)
        g = rng.standard_normal(a.shape).astype(dtype)
        assert np.allclose(active.col2im(g, 2, xp.shape[2]),
                           py.col2im(g, 2, xp.shape[2]), atol=1e-12)
        assert np.allclose(active.snake_fwd(x), py.snake_fwd(x), atol=1e-6)
        assert np.allclose(active.sigmoid_fwd(x.copy()), py.sigmoid_fwd(x.copy()),
                           atol=1e-6)

    # the compiled scalar elementwise loops are not selected (numpy SIMD is
    # faster) but must stay correct
    from codecsep.numerics import _core
    for dtype in (np.float32, np.float64):
        x = rng.standard_normal((2, 3, 17)).astype(dtype)
        assert np.allclose(_core.snake_fwd(x), py.snake_fwd(x), atol=1e-6)
        gy = rng.standard_normal(x.shape).astype(dtype)
        assert np.allclose(_core.snake_bwd(x, gy), py.snake_bwd(x, gy),
                           atol=1e-6)
        s = _core.sigmoid_fwd(x)
        assert np.allclose(s, py.sigmoid_fwd(x), atol=1e-6)
        assert np.allclose(_core.sigmoid_bwd(s, gy), py.sigmoid_bwd(s, gy),
                           atol=1e-6)


def test_snake_and_sigmoid_values():
    b = get_backend("numpy")
    x = np.array([0.0, np.pi, np.pi / 2.0, -np.pi / 2.0])
    y = b.snake_fwd(x)
    want = np.array([0.0, np.pi, np.pi / 2.0 + 1.0, -np.pi / 2.0 + 1.0])
    assert np.allclose(y, want, atol=1e-12)
    s = b.sigmoid_fwd(np.array([0.0]))
    assert abs(s[0] - 0.5) < 1e-15


def test_counter_records_conv_mac_count():
    x = np.zeros((2, 3, 16))
    w = np.zeros((5, 3, 4))
    with counter.counting() as c:
        y = kernels.conv1d_fwd(x, w, 2, 1)
    t_out = y.shape[2]
    assert c.total == 2 * 3 * 5 * 4 * t_out
    # nothing recorded outside the context
    kernels.conv1d_fwd(x, w, 2, 1)
    assert c.total == 2 * 3 * 5 * 4 * t_out
