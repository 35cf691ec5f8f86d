import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsdering.gradcheck import numeric_grad, relative_error
from vsdering.tensor_core import (
    AdamState,
    BatchNormParams,
    ConvParams,
    ShapeError,
    activation,
    activation_backward,
    activation_forward,
    adam_step,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    mse_loss,
)


def conv_loop(x, k, b):
    """Direct nested-loop same-padded cross-correlation."""
    n, c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((n, c_out, h, w))
    for i in range(n):
        for co in range(c_out):
            for y in range(h):
                for xx in range(w):
                    acc = b[co]
                    for ci in range(c_in):
                        for dy in range(kh):
                            for dx in range(kw):
                                yy, xs = y + dy - ph, xx + dx - pw
                                if 0 <= yy < h and 0 <= xs < w:
                                    acc += k[co, ci, dy, dx] * x[i, ci, yy, xs]
                    out[i, co, y, xx] = acc
    return out


def conv(k, b=None, dtype=np.float64):
    k = np.asarray(k, dtype)
    b = np.zeros(k.shape[0], dtype) if b is None else np.asarray(b, dtype)
    return ConvParams(k, b)


# -- conv2d ------------------------------------------------------------------


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 1, 5, 7))
    out = conv2d_forward(x, conv(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out, x)


def test_conv_all_ones_constant_input():
    x = np.full((1, 1, 6, 6), 2.5)
    out = conv2d_forward(x, conv(np.ones((1, 1, 3, 3))))
    np.testing.assert_allclose(out[0, 0, 1:-1, 1:-1], 9 * 2.5)
    # zero padding: edges see 6 taps, corners 4
    assert out[0, 0, 0, 3] == pytest.approx(6 * 2.5)
    assert out[0, 0, 0, 0] == pytest.approx(4 * 2.5)


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
    k = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    got = conv2d_forward(x, ConvParams(k, b))
    want = conv_loop(x.astype(np.float64), k.astype(np.float64), b.astype(np.float64))
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)


def test_conv_non_square_kernel_matches_loop():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 6, 4))
    k = rng.standard_normal((3, 2, 1, 5))
    b = rng.standard_normal(3)
    np.testing.assert_allclose(conv2d_forward(x, conv(k, b)), conv_loop(x, k, b), atol=1e-12)


def test_conv_row_chunking_is_exact(monkeypatch):
    import vsdering.tensor_core as tc

    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 9, 7))
    p = conv(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3))
    up = rng.standard_normal((1, 3, 9, 7))
    full = conv2d_forward(x, p)
    dx_full = conv2d_backward(x, p, up)
    kg = p.kernel_grad.copy()
    monkeypatch.setattr(tc, "_COL_BYTES_LIMIT", 1)  # one output row per chunk
    p.zero_grad()
    np.testing.assert_allclose(conv2d_forward(x, p), full, atol=1e-12)
    np.testing.assert_allclose(conv2d_backward(x, p, up), dx_full, atol=1e-12)
    np.testing.assert_allclose(p.kernel_grad, kg, atol=1e-12)


def test_conv_shape_errors():
    p = conv(np.ones((2, 3, 3, 3)))
    with pytest.raises(ShapeError, match=r"\(1, 2, 4, 4\).*\(2, 3, 3, 3\)"):
        conv2d_forward(np.zeros((1, 2, 4, 4)), p)
    with pytest.raises(ShapeError, match="odd"):
        conv(np.ones((1, 1, 2, 3)))
    with pytest.raises(ShapeError):
        conv2d_backward(np.zeros((1, 3, 4, 4)), p, np.zeros((1, 2, 4, 5)))


def test_conv_backward_zero_upstream():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 2, 4, 4))
    p = conv(rng.standard_normal((3, 2, 3, 3)))
    dx = conv2d_backward(x, p, np.zeros((1, 3, 4, 4)))
    assert not dx.any()
    assert not p.kernel_grad.any() and not p.bias_grad.any()


def test_conv_backward_identity_kernel():
    up = np.random.default_rng(5).standard_normal((2, 1, 3, 4))
    dx = conv2d_backward(np.zeros((2, 1, 3, 4)), conv(np.ones((1, 1, 1, 1))), up)
    np.testing.assert_array_equal(dx, up)


def test_conv_backward_accumulates():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 1, 4, 4))
    up = rng.standard_normal((1, 2, 4, 4))
    p = conv(rng.standard_normal((2, 1, 3, 3)))
    conv2d_backward(x, p, up)
    once = p.kernel_grad.copy()
    conv2d_backward(x, p, up)
    np.testing.assert_allclose(p.kernel_grad, 2 * once)


def test_conv_backward_finite_differences():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 2, 4, 5))
    p = conv(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3))
    probe = rng.standard_normal((2, 3, 4, 5))

    def loss():
        return float(np.sum(conv2d_forward(x, p) * probe))

    dx = conv2d_backward(x, p, probe)
    for analytic, arr in ((dx, x), (p.kernel_grad, p.kernels), (p.bias_grad, p.biases)):
        num = numeric_grad(loss, arr, np.arange(arr.size), 1e-3)
        assert relative_error(analytic, num) < 1e-3


@settings(max_examples=30, deadline=None)
@given(
    a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16),
)
def test_conv_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal((1, 2, 5, 5))
    x2 = rng.standard_normal((1, 2, 5, 5))
    p = conv(rng.standard_normal((2, 2, 3, 3)))
    lhs = conv2d_forward(a * x1 + b * x2, p)
    rhs = a * conv2d_forward(x1, p) + b * conv2d_forward(x2, p)
    scale = max(np.abs(rhs).max(), 1.0)
    assert np.abs(lhs - rhs).max() <= 1e-5 * scale


@settings(max_examples=20, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), k=st.sampled_from([1, 3, 5]))
def test_conv_preserves_spatial_shape(h, w, k):
    x = np.ones((1, 1, h, w))
    assert conv2d_forward(x, conv(np.ones((2, 1, k, k)))).shape == (1, 2, h, w)


def test_conv_deterministic():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((4, 8, 16, 16)).astype(np.float32)
    p = ConvParams(rng.standard_normal((8, 8, 3, 3)).astype(np.float32), np.zeros(8, np.float32))
    assert conv2d_forward(x, p).tobytes() == conv2d_forward(x, p).tobytes()


# -- batch norm --------------------------------------------------------------


def bn(c, gamma=1.0, beta=0.0, dtype=np.float64, **kw):
    return BatchNormParams(
        np.full(c, gamma, dtype), np.full(c, beta, dtype), np.zeros(c, dtype), np.ones(c, dtype), **kw
    )


def test_batchnorm_identity_on_standardized_input():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((4, 2, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out, _ = batchnorm_forward(x, bn(2))
    np.testing.assert_allclose(out, x, atol=1e-4)


def test_batchnorm_zero_gamma():
    x = np.random.default_rng(10).standard_normal((2, 3, 4, 4))
    out, _ = batchnorm_forward(x, bn(3, gamma=0.0, beta=3.0))
    np.testing.assert_array_equal(out, 3.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16), loc=st.floats(-50, 50), spread=st.floats(0.5, 20))
def test_batchnorm_output_moments(seed, loc, spread):
    x = loc + spread * np.random.default_rng(seed).standard_normal((3, 2, 4, 5))
    out, _ = batchnorm_forward(x, bn(2, gamma=2.0, beta=3.0))
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 3.0, atol=1e-5)
    # eps=1e-5 shrinks the variance slightly below gamma^2
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 4.0, atol=1e-3)


def test_batchnorm_running_stats_and_infer():
    rng = np.random.default_rng(11)
    x = 2.0 + 3.0 * rng.standard_normal((4, 1, 6, 6))
    p = bn(1)
    batchnorm_forward(x, p)
    m = x.size
    assert p.running_mean[0] == pytest.approx(0.1 * x.mean())
    assert p.running_var[0] == pytest.approx(0.9 + 0.1 * x.var() * m / (m - 1))
    p.mode = "infer"
    out, _ = batchnorm_forward(x, p)
    want = (x - p.running_mean[0]) / np.sqrt(p.running_var[0] + p.eps)
    np.testing.assert_allclose(out, want)


def test_batchnorm_needs_two_values_in_train_mode():
    with pytest.raises(ShapeError, match="n\\*h\\*w >= 2"):
        batchnorm_forward(np.ones((1, 2, 1, 1)), bn(2))
    p = bn(2, mode="infer")
    batchnorm_forward(np.ones((1, 2, 1, 1)), p)


def test_batchnorm_backward_requires_cache():
    with pytest.raises(RuntimeError, match="without a cached forward"):
        batchnorm_backward(None, np.zeros((1, 1, 2, 2)))
    _, cache = batchnorm_forward(np.arange(4.0).reshape(1, 1, 2, 2), bn(1))
    batchnorm_backward(cache, np.zeros((1, 1, 2, 2)))
    with pytest.raises(RuntimeError, match="already consumed"):
        batchnorm_backward(cache, np.zeros((1, 1, 2, 2)))


def test_batchnorm_backward_zero_upstream():
    x = np.random.default_rng(12).standard_normal((2, 2, 3, 3))
    p = bn(2, gamma=1.5)
    _, cache = batchnorm_forward(x, p)
    dx = batchnorm_backward(cache, np.zeros_like(x))
    assert not dx.any() and not p.gamma_grad.any() and not p.beta_grad.any()


def test_batchnorm_backward_constant_upstream_gives_zero_input_grad():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((2, 3, 4, 4))
    p = bn(3, gamma=1.7, beta=-0.3)
    up = np.broadcast_to(np.array([1.0, -2.0, 0.5]).reshape(1, 3, 1, 1), x.shape).copy()
    _, cache = batchnorm_forward(x, p)
    dx = batchnorm_backward(cache, up)
    assert np.abs(dx).max() < 1e-6

    def loss():
        return float(np.sum(batchnorm_forward(x, p)[0] * up))

    num = numeric_grad(loss, x, np.arange(x.size), 1e-3)
    assert np.abs(num).max() < 1e-6


def test_batchnorm_backward_finite_differences():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((2, 2, 3, 4))
    p = BatchNormParams(rng.uniform(0.5, 2, 2), rng.standard_normal(2), np.zeros(2), np.ones(2))
    probe = rng.standard_normal(x.shape)

    def loss():
        return float(np.sum(batchnorm_forward(x, p)[0] * probe))

    _, cache = batchnorm_forward(x, p)
    dx = batchnorm_backward(cache, probe)
    for analytic, arr in ((dx, x), (p.gamma_grad, p.gamma), (p.beta_grad, p.beta)):
        num = numeric_grad(loss, arr, np.arange(arr.size), 1e-3)
        assert relative_error(analytic, num) < 1e-3


# -- activations and loss ----------------------------------------------------


def test_relu_values():
    x = np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3)
    np.testing.assert_array_equal(activation(x, "relu").ravel(), [0, 0, 2])


def test_tanh_fixed_point_and_range():
    assert activation(np.zeros((1, 1, 1, 1)), "tanh")[0, 0, 0, 0] == 0.0
    x = np.linspace(-8, 8, 101).reshape(1, 1, 1, -1).astype(np.float32)
    y = activation_forward(x, "tanh")
    assert np.all(np.abs(y[np.abs(x) < 5]) < 1)


def test_tanh_backward_at_zero():
    x = np.zeros((1, 1, 1, 1))
    g = activation(x, "tanh", upstream=np.ones_like(x))
    assert g[0, 0, 0, 0] == 1.0
    num = numeric_grad(lambda: float(np.tanh(x).sum()), x, [0], 1e-4)
    assert abs(num[0] - 1.0) < 1e-6


def test_relu_backward_mask():
    x = np.array([-1.0, 0.0, 3.0]).reshape(1, 1, 1, 3)
    g = activation_backward(x, "relu", np.full_like(x, 2.0))
    np.testing.assert_array_equal(g.ravel(), [0, 0, 2])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_activation_ranges(values):
    x = np.array(values).reshape(1, 1, 1, -1)
    assert np.all(activation_forward(x, "relu") >= 0)
    t = activation_forward(x, "tanh")
    assert np.all(np.abs(t) <= 1)
    small = np.abs(x) < 15
    assert np.all(np.abs(t[small]) < 1)


def test_unknown_activation():
    with pytest.raises(ValueError):
        activation_forward(np.zeros((1, 1, 1, 1)), "sigmoid")


def test_mse_zero_and_hand_case():
    a = np.ones((1, 1, 1, 2))
    loss, grad = mse_loss(a, a)
    assert loss == 0 and not grad.any()
    loss, grad = mse_loss(a, np.zeros_like(a))
    assert loss == 1.0
    np.testing.assert_array_equal(grad.ravel(), [1.0, 1.0])


def test_mse_matches_loop():
    rng = np.random.default_rng(15)
    out = rng.standard_normal((2, 1, 3, 4))
    lab = rng.standard_normal((2, 1, 3, 4))
    total = 0.0
    for o, l in zip(out.ravel(), lab.ravel()):
        total += (o - l) ** 2
    loss, _ = mse_loss(out, lab)
    assert abs(loss - total / out.size) < 1e-7


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        mse_loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


# -- Adam --------------------------------------------------------------------


def test_adam_zero_gradient():
    w = np.array([1.0, -2.0])
    state = AdamState()
    adam_step([(w, np.zeros(2))], state)
    np.testing.assert_array_equal(w, [1.0, -2.0])
    assert state.step_count == 1


@pytest.mark.parametrize("g", [0.3, -5.0, 1e-3])
def test_adam_first_step_moves_by_lr(g):
    w = np.array([0.0])
    adam_step([(w, np.array([g]))], AdamState(lr=0.01))
    assert w[0] == pytest.approx(-0.01 * np.sign(g), rel=1e-4)


def scalar_adam(w, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return w


def test_adam_quadratic_matches_scalar_recurrence():
    w = np.array([1.0])
    state = AdamState(lr=0.1)
    grad = np.zeros(1)
    for _ in range(100):
        grad[...] = 2 * w
        adam_step([(w, grad)], state)
    want = scalar_adam(1.0, 0.1, 100)
    assert abs(want) < 0.5
    assert w[0] == pytest.approx(want, rel=1e-12, abs=1e-12)
    assert state.step_count == 100
    assert all(np.all(v >= 0) for v in state.v)


def test_adam_missing_gradient():
    with pytest.raises(ValueError, match="no accumulated gradient"):
        adam_step([(np.zeros(2), None)], AdamState())
