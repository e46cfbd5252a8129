import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from numeral_transfer import tensor as T
from numeral_transfer.errors import ShapeError

from fd import numeric_grad, rel_error


def direct_conv(x, w, b):
    """Brute-force same-padded correlation, loop over every output cell."""
    n, c, h, wd = x.shape
    f = w.shape[0]
    out = np.zeros((n, f, h, wd))
    for i in range(n):
        for k in range(f):
            for y in range(h):
                for xx in range(wd):
                    s = b[k]
                    for ch in range(c):
                        for dy in range(3):
                            for dx in range(3):
                                yy, xc = y + dy - 1, xx + dx - 1
                                if 0 <= yy < h and 0 <= xc < wd:
                                    s += x[i, ch, yy, xc] * w[k, ch, dy, dx]
                    out[i, k, y, xx] = s
    return out


# ----------------------------------------------------------------- conv

def test_conv_zero_input_gives_bias():
    x = np.zeros((1, 1, 3, 3))
    w = np.random.default_rng(0).normal(size=(1, 1, 3, 3))
    out = T.conv2d_forward(x, w, np.array([0.75]))
    assert np.all(out == 0.75)


def test_conv_identity_kernel():
    x = np.random.default_rng(1).random((2, 1, 6, 5))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(T.conv2d_forward(x, w, np.zeros(1)), x)


ONES_KERNEL_4X4 = np.array([[14, 24, 30, 22],
                            [33, 54, 63, 45],
                            [57, 90, 99, 69],
                            [46, 72, 78, 54]], dtype=float)


def test_conv_ones_kernel_neighbourhood_sums():
    x = np.arange(1, 17, dtype=float).reshape(1, 1, 4, 4)
    w = np.ones((1, 1, 3, 3))
    np.testing.assert_array_equal(direct_conv(x, w, np.zeros(1))[0, 0], ONES_KERNEL_4X4)
    np.testing.assert_allclose(T.conv2d_forward(x, w, np.zeros(1))[0, 0], ONES_KERNEL_4X4, rtol=0, atol=1e-12)


@pytest.mark.parametrize("shape,f", [((2, 3, 5, 6), 4), ((1, 9, 4, 4), 10), ((3, 1, 7, 3), 2)])
def test_conv_matches_direct_summation(shape, f):
    rng = np.random.default_rng(2)
    x = rng.normal(size=shape)
    w = rng.normal(size=(f, shape[1], 3, 3))
    b = rng.normal(size=f)
    np.testing.assert_allclose(T.conv2d_forward(x, w, b), direct_conv(x, w, b), rtol=1e-12, atol=1e-12)


def test_conv_shape_mismatch_names_dimension():
    with pytest.raises(ShapeError, match="channel dimension C"):
        T.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((3, 1, 3, 3)), np.zeros(3))
    with pytest.raises(ShapeError, match="filter dimension F"):
        T.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((3, 2, 3, 3)), np.zeros(4))


def test_conv_geometry_checked():
    geom = T.ConvGeometry(in_channels=2, out_channels=3)
    assert geom.output_shape((5, 2, 8, 8)) == (5, 3, 8, 8)
    with pytest.raises(ShapeError):
        T.conv2d_forward(np.zeros((1, 1, 4, 4)), np.zeros((3, 1, 3, 3)), np.zeros(3), geom)


def test_conv_backward_zero_upstream():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 4, 4))
    w = rng.normal(size=(5, 3, 3, 3))
    gx, gw, gb = T.conv2d_backward(x, w, np.zeros((2, 5, 4, 4)))
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_backward_identity_single_pixel():
    x = np.ones((1, 1, 1, 1))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    gx, _, _ = T.conv2d_backward(x, w, np.ones((1, 1, 1, 1)))
    assert gx.shape == (1, 1, 1, 1) and gx[0, 0, 0, 0] == 1.0


def test_conv_backward_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    up = rng.normal(size=(1, 3, 5, 5))
    loss = lambda: float(np.sum(T.conv2d_forward(x, w, b) * up))
    gx, gw, gb = T.conv2d_backward(x, w, up)
    for analytic, var in ((gx, x), (gw, w), (gb, b)):
        assert rel_error(analytic, numeric_grad(loss, var, h=1e-3)).max() <= 1e-4


def test_conv_backward_shape_mismatch():
    with pytest.raises(ShapeError):
        T.conv2d_backward(np.zeros((1, 1, 4, 4)), np.zeros((2, 1, 3, 3)), np.zeros((1, 3, 4, 4)))


# -------------------------------------------------------------- maxpool

def test_maxpool_constant_field():
    out, _ = T.maxpool2x2_forward(np.full((2, 3, 4, 6), 0.3))
    assert out.shape == (2, 3, 2, 3) and np.all(out == 0.3)


def test_maxpool_single_window():
    out, mask = T.maxpool2x2_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert out[0, 0, 0, 0] == 4.0
    assert mask[0, 0, 0, 0] == 3  # row-major index of (1, 1)


def test_maxpool_enumerated_windows():
    x = np.arange(1, 17, dtype=float).reshape(1, 1, 4, 4)
    out, _ = T.maxpool2x2_forward(x)
    np.testing.assert_array_equal(out[0, 0], [[6, 8], [14, 16]])


def test_maxpool_odd_size_rejected():
    with pytest.raises(ShapeError, match="even"):
        T.maxpool2x2_forward(np.zeros((1, 1, 3, 4)))


def test_maxpool_tie_takes_first_in_row_major_order():
    _, mask = T.maxpool2x2_forward(np.array([[[[5.0, 5.0], [5.0, 5.0]]]]))
    assert mask[0, 0, 0, 0] == 0
    g = T.maxpool2x2_backward(np.array([[[[1.0]]]]), mask)
    np.testing.assert_array_equal(g[0, 0], [[1, 0], [0, 0]])


def test_maxpool_backward_zero_and_routing():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    _, mask = T.maxpool2x2_forward(x)
    assert not T.maxpool2x2_backward(np.zeros((1, 1, 1, 1)), mask).any()
    g = T.maxpool2x2_backward(np.full((1, 1, 1, 1), 5.0), mask)
    np.testing.assert_array_equal(g[0, 0], [[0, 0], [0, 5]])


def test_maxpool_backward_finite_differences():
    rng = np.random.default_rng(5)
    # distinct values spaced well beyond h, so no window is near a tie
    x = rng.permutation(16).astype(float).reshape(1, 1, 4, 4) * 0.1
    up = rng.normal(size=(1, 1, 2, 2))
    loss = lambda: float(np.sum(T.maxpool2x2_forward(x)[0] * up))
    _, mask = T.maxpool2x2_forward(x)
    analytic = T.maxpool2x2_backward(up, mask)
    numeric = numeric_grad(loss, x, h=1e-3)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-12)


def test_maxpool_backward_mask_mismatch():
    with pytest.raises(ShapeError):
        T.maxpool2x2_backward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 1, 2), dtype=np.int8))


# --------------------------------------------------------------- matmul

def test_matmul_identity_and_zero():
    a = np.random.default_rng(6).normal(size=(3, 4))
    np.testing.assert_array_equal(T.matmul(a, np.eye(4)), a)
    assert not T.matmul(np.zeros((2, 3)), a).any()


def test_matmul_triple_loop():
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(T.matmul(a, b), ref, rtol=0, atol=1e-12)


def test_matmul_dimension_mismatch():
    with pytest.raises(ShapeError, match="inner dimension"):
        T.matmul(np.zeros((2, 3)), np.zeros((4, 2)))


# ------------------------------------------------------------ activations

def test_elu_values():
    assert T.elu(np.array([0.0]))[0] == 0.0
    assert T.elu(np.array([2.0]))[0] == 2.0
    assert T.elu(np.array([-1.0]))[0] == pytest.approx(-0.632121, abs=5e-7)


def test_elu_continuity_and_gradient_at_zero():
    eps = 1e-9
    for alpha in (1.0, 0.5, 2.0):
        left = T.elu(np.array([-eps]), alpha)[0]
        right = T.elu(np.array([eps]), alpha)[0]
        assert abs(left - right) < 1e-8 * max(1.0, alpha)
        assert T.elu_grad(np.array([-1e-300]), alpha)[0] == pytest.approx(alpha)
    assert T.elu_grad(np.array([0.0]))[0] == 1.0
    assert T.elu_grad(np.array([1e-12]))[0] == 1.0


def test_elu_grad_matches_finite_differences():
    x = np.linspace(-3, 3, 61) + 0.013
    num = (T.elu(x + 1e-6) - T.elu(x - 1e-6)) / 2e-6
    np.testing.assert_allclose(T.elu_grad(x), num, rtol=1e-6)
    np.testing.assert_allclose(T.elu_grad_from_output(T.elu(x)), T.elu_grad(x), rtol=1e-12)


def test_elu_rejects_nonpositive_alpha():
    with pytest.raises(ValueError):
        T.elu(np.zeros(2), alpha=0.0)


def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(np.zeros((3, 10))), 0.1, rtol=1e-15)


def test_softmax_large_logits_no_overflow():
    mpmath.mp.dps = 50
    e = [mpmath.e ** 1000, mpmath.mpf(1)]
    ref = [float(v / sum(e)) for v in e]
    with np.errstate(over="raise"):
        out = T.softmax(np.array([[1000.0, 0.0]]))
    np.testing.assert_allclose(out[0], ref, atol=1e-300)


# ------------------------------------------------------------- properties

small_ints = st.integers(min_value=1, max_value=4)


@settings(max_examples=30, deadline=None)
@given(n=small_ints, c=small_ints, f=small_ints, h=st.integers(1, 5), w=st.integers(1, 5), seed=st.integers(0, 2**16))
def test_conv_shape_law(n, c, f, h, w, seed):
    rng = np.random.default_rng(seed)
    out = T.conv2d_forward(rng.normal(size=(n, c, 2 * h, 2 * w)), rng.normal(size=(f, c, 3, 3)), np.zeros(f))
    assert out.shape == (n, f, 2 * h, 2 * w)
    pooled, mask = T.maxpool2x2_forward(out)
    assert pooled.shape == mask.shape == (n, f, h, w)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_conv_and_matmul_are_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(3, 2, 3, 3))
    x, y = rng.normal(size=(2, 2, 4, 4)), rng.normal(size=(2, 2, 4, 4))
    zero = np.zeros(3)
    lhs = T.conv2d_forward(a * x + b * y, w, zero)
    rhs = a * T.conv2d_forward(x, w, zero) + b * T.conv2d_forward(y, w, zero)
    scale = np.abs(lhs).max() + np.abs(rhs).max() + 1e-300
    assert np.abs(lhs - rhs).max() <= 1e-9 * scale
    m = rng.normal(size=(4, 5))
    u, v = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    lhs = T.matmul(a * u + b * v, m)
    rhs = a * T.matmul(u, m) + b * T.matmul(v, m)
    assert np.abs(lhs - rhs).max() <= 1e-9 * (np.abs(lhs).max() + np.abs(rhs).max() + 1e-300)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 12)),
                  elements=st.floats(-50, 50)),
       st.floats(-100, 100))
def test_softmax_rows_and_shift_invariance(logits, shift):
    p = T.softmax(logits)
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-6)
    assert np.all((p >= 0) & (p <= 1))
    assert np.abs(T.softmax(logits + shift) - p).max() <= 1e-9


def test_check_tensor_invariants():
    T.check_tensor(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        T.check_tensor(np.zeros((1, 1, 1, 1, 1)))
    with pytest.raises(ShapeError):
        T.check_tensor(np.array([1.0, np.nan]))
    with pytest.raises(ShapeError):
        T.check_tensor(np.zeros((0, 3)))
