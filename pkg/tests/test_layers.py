import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from akinet.errors import ConfigError, DimensionError, LabelError, NumericError, StateError
from akinet.layers import (
    BatchNorm,
    Conv1d,
    Conv2d,
    Dense,
    Dropout,
    MaxPool2d,
    Relu,
    ResidualBlock,
    Sequential,
    Sigmoid,
    activation_forward,
    bce_loss,
    relu,
    sigmoid,
)


def naive_matmul(x, W, b):
    out = np.zeros((x.shape[0], W.shape[1]))
    for i in range(x.shape[0]):
        for j in range(W.shape[1]):
            s = b[j]
            for k in range(x.shape[1]):
                s += x[i, k] * W[k, j]
            out[i, j] = s
    return out


def naive_conv1d(x, W, b):
    B, C, L = x.shape
    Co, _, K = W.shape
    xp = np.pad(x, ((0, 0), (0, 0), (K // 2, K // 2)))
    out = np.zeros((B, Co, L))
    for n in range(B):
        for o in range(Co):
            for t in range(L):
                s = b[o]
                for c in range(C):
                    for k in range(K):
                        s += W[o, c, k] * xp[n, c, t + k]
                out[n, o, t] = s
    return out


def naive_conv2d(x, W, b):
    B, C, H, Wd = x.shape
    Co, _, K, _ = W.shape
    p = K // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((B, Co, H, Wd))
    for n in range(B):
        for o in range(Co):
            for i in range(H):
                for j in range(Wd):
                    s = b[o]
                    for c in range(C):
                        for u in range(K):
                            for v in range(K):
                                s += W[o, c, u, v] * xp[n, c, i + u, j + v]
                    out[n, o, i, j] = s
    return out


def naive_maxpool(x):
    B, C, H, W = x.shape
    Ho, Wo = -(-H // 2), -(-W // 2)
    out = np.empty((B, C, Ho, Wo))
    for n in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    out[n, c, i, j] = x[n, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
    return out


# ---- dense

def test_dense_identity():
    d = Dense(2, 2)
    d.params["W"][...] = np.eye(2)
    d.params["b"][...] = 0
    assert np.array_equal(d.forward(np.array([[3.0, -1.0]])), [[3.0, -1.0]])


def test_dense_zero_weight():
    d = Dense(3, 2)
    d.params["W"][...] = 0
    d.params["b"][...] = [1, 2]
    out = d.forward(np.random.default_rng(0).standard_normal((5, 3)))
    assert np.array_equal(out, np.tile([1.0, 2.0], (5, 1)))


def test_dense_matches_triple_loop():
    r = np.random.default_rng(1)
    d = Dense(3, 2, r)
    d.params["b"][...] = r.standard_normal(2)
    x = r.standard_normal((4, 3))
    np.testing.assert_allclose(d.forward(x), naive_matmul(x, d.params["W"], d.params["b"]), rtol=1e-12)


def test_dense_width_mismatch():
    with pytest.raises(DimensionError, match="3"):
        Dense(3, 2).forward(np.zeros((2, 4)))


# ---- conv1d

def test_conv1d_boundary_sums():
    c = Conv1d(1, 1, 3)
    c.params["W"][...] = 1
    c.params["b"][...] = 0
    out = c.forward(np.ones((1, 1, 5)))
    assert np.array_equal(out[0, 0], [2, 3, 3, 3, 2])


def test_conv1d_identity_kernel():
    c = Conv1d(1, 1, 3)
    c.params["W"][...] = [[[0, 1, 0]]]
    c.params["b"][...] = 0
    x = np.random.default_rng(2).standard_normal((3, 1, 7))
    np.testing.assert_array_equal(c.forward(x), x)


def test_conv1d_matches_sliding_window():
    r = np.random.default_rng(3)
    c = Conv1d(2, 16, 3, r)
    c.params["b"][...] = r.standard_normal(16)
    x = r.standard_normal((3, 2, 9))
    np.testing.assert_allclose(c.forward(x), naive_conv1d(x, c.params["W"], c.params["b"]), rtol=1e-11, atol=1e-12)


def test_conv1d_channel_mismatch():
    with pytest.raises(DimensionError):
        Conv1d(2, 4).forward(np.zeros((1, 3, 5)))


# ---- conv2d

def test_conv2d_identity_kernel():
    c = Conv2d(1, 1, 3)
    c.params["W"][...] = 0
    c.params["W"][0, 0, 1, 1] = 1
    c.params["b"][...] = 0
    x = np.random.default_rng(4).standard_normal((2, 1, 5, 4))
    np.testing.assert_array_equal(c.forward(x), x)


def test_conv2d_padded_counts():
    c = Conv2d(1, 1, 3)
    c.params["W"][...] = 1
    c.params["b"][...] = 0
    out = c.forward(np.ones((1, 1, 3, 3)))[0, 0]
    assert np.array_equal(out, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


@pytest.mark.parametrize("c_in,c_out,k", [(2, 3, 3), (9, 4, 3), (3, 2, 1)])
def test_conv2d_matches_direct_loop(c_in, c_out, k):
    r = np.random.default_rng(5)
    c = Conv2d(c_in, c_out, k, r)
    c.params["b"][...] = r.standard_normal(c_out)
    x = r.standard_normal((2, c_in, 5, 4))
    np.testing.assert_allclose(c.forward(x), naive_conv2d(x, c.params["W"], c.params["b"]), rtol=1e-11, atol=1e-12)


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        Conv2d(2, 4).forward(np.zeros((1, 3, 4, 4)))


# ---- maxpool

def test_maxpool_ceil_windows():
    x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    assert np.array_equal(MaxPool2d().forward(x)[0, 0], [[5, 6], [8, 9]])


def test_maxpool_constant():
    out = MaxPool2d().forward(np.full((2, 3, 5, 4), 1.5))
    assert out.shape == (2, 3, 3, 2)
    assert np.all(out == 1.5)


def test_maxpool_matches_window_scan():
    x = np.random.default_rng(6).standard_normal((2, 3, 7, 5))
    np.testing.assert_array_equal(MaxPool2d().forward(x), naive_maxpool(x))


def test_maxpool_backward_routes_to_argmax():
    x = np.random.default_rng(7).standard_normal((1, 1, 3, 3))
    mp = MaxPool2d()
    mp.forward(x, train=True)
    dx = mp.backward(np.ones((1, 1, 2, 2)))
    assert dx.sum() == 4
    assert set(x[dx == 1]) == set(naive_maxpool(x).ravel())


# ---- batchnorm

def test_batchnorm_two_points():
    bn = BatchNorm(1)
    out = bn.forward(np.array([[1.0], [3.0]]), train=True)
    np.testing.assert_allclose(out.ravel(), [-1, 1], atol=1e-5)


def test_batchnorm_affine():
    bn = BatchNorm(1)
    bn.params["gamma"][...] = 2
    bn.params["beta"][...] = 1
    out = bn.forward(np.array([[1.0], [3.0]]), train=True)
    np.testing.assert_allclose(out.ravel(), [-1, 3], atol=1e-5)


def test_batchnorm_running_stats_recurrence():
    r = np.random.default_rng(8)
    bn = BatchNorm(1)
    rm, rv = 0.0, 1.0
    for _ in range(2):
        x = r.normal(3.0, 2.0, size=(6, 1))
        bn.forward(x, train=True)
        vals = [float(v) for v in x[:, 0]]
        m = sum(vals) / len(vals)
        var_unbiased = sum((v - m) ** 2 for v in vals) / (len(vals) - 1)
        rm = 0.9 * rm + 0.1 * m
        rv = 0.9 * rv + 0.1 * var_unbiased
    x = r.standard_normal((4, 1))
    expected = (x - rm) / np.sqrt(rv + 1e-5)
    np.testing.assert_allclose(bn.forward(x, train=False), expected, rtol=0, atol=1e-12)


def test_batchnorm_single_element_rejected():
    with pytest.raises(NumericError):
        BatchNorm(2).forward(np.ones((1, 2)), train=True)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_batchnorm_standardizes(b, c, hw, seed):
    x = np.random.default_rng(seed).normal(5.0, 30.0, size=(b, c, hw, hw))
    raw_var = x.var(axis=(0, 2, 3))
    out = BatchNorm(c).forward(x, train=True)
    m = out.mean(axis=(0, 2, 3))
    v = out.var(axis=(0, 2, 3))
    assert np.all(np.abs(m) <= 1e-8)
    # eps makes the output variance var / (var + eps) exactly
    np.testing.assert_allclose(v, raw_var / (raw_var + 1e-5), rtol=0, atol=1e-9)
    # so it is within 1e-6 of one once the batch variance exceeds 10
    assume(raw_var.min() > 10)
    assert np.all(np.abs(v - 1) <= 1e-6)


# ---- dropout

def test_dropout_rate_zero_is_identity():
    x = np.random.default_rng(10).standard_normal((4, 5))
    np.testing.assert_array_equal(Dropout(0.0, np.random.default_rng(0)).forward(x, train=True), x)


@pytest.mark.parametrize("rate", [0.0, 0.3, 0.5, 0.9])
def test_dropout_eval_is_identity(rate):
    x = np.random.default_rng(11).standard_normal((4, 5))
    np.testing.assert_array_equal(Dropout(rate, np.random.default_rng(0)).forward(x, train=False), x)


def test_dropout_monte_carlo_expectation():
    out = Dropout(0.5, np.random.default_rng(12)).forward(np.ones(10**5), train=True)
    assert abs(out.mean() - 1.0) < 0.01
    assert set(np.unique(out)) <= {0.0, 2.0}


@pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
def test_dropout_bad_rate(rate):
    with pytest.raises(ConfigError):
        Dropout(rate)


# ---- activations and loss

def test_activation_values():
    assert sigmoid(np.array(0.0)) == 0.5
    assert np.array_equal(relu(np.array([-2.0, 0.0, 3.0])), [0, 0, 3])
    assert np.array_equal(activation_forward("relu", np.array([-1.0, 2.0])), [0, 2])
    assert activation_forward("sigmoid", np.array([0.0]))[0] == 0.5


def test_sigmoid_does_not_saturate_at_40():
    s = sigmoid(np.array([-40.0, 40.0]))
    assert s[0] > 0 and s[1] < 1


def test_sigmoid_stable_to_700():
    x = np.linspace(-700, 700, 1001)
    with np.errstate(all="raise"):
        s = sigmoid(x)
    assert np.all((s > 0) & (s < 1))
    assert np.all(np.diff(s) >= 0)


def test_bce_ln2():
    loss, _ = bce_loss(np.array([0.5]), np.array([1.0]))
    assert loss == pytest.approx(np.log(2), abs=1e-12)


def test_bce_perfect_prediction():
    loss, _ = bce_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    assert loss <= 1e-11


def test_bce_matches_scalar_loop():
    r = np.random.default_rng(13)
    p = r.uniform(0.01, 0.99, 50)
    y = r.integers(0, 2, 50).astype(float)
    expected = 0.0
    for pi, yi in zip(p, y):
        expected -= yi * np.log(pi) + (1 - yi) * np.log(1 - pi)
    loss, _ = bce_loss(p, y)
    assert abs(loss - expected / 50) <= 1e-12


def test_bce_rejects_non_binary_labels():
    with pytest.raises(LabelError):
        bce_loss(np.array([0.3, 0.4]), np.array([0.0, 2.0]))


# ---- backward

def test_backward_before_forward():
    with pytest.raises(StateError):
        Dense(2, 2).backward(np.ones((1, 2)))


def test_unused_parameter_has_zero_gradient():
    r = np.random.default_rng(14)
    d1, d2 = Dense(3, 4, r), Dense(3, 1, r)
    x = r.standard_normal((5, 3))
    d1.forward(x, train=True)  # computed but not part of the loss
    seq = Sequential([d2, Sigmoid()])
    p = seq.forward(x, train=True)[:, 0]
    _, dp = bce_loss(p, np.array([0, 1, 1, 0, 1.0]))
    d1.zero_grad()
    seq.backward(dp[:, None])
    assert np.all(d1.grads["W"] == 0) and np.all(d1.grads["b"] == 0)


def test_logistic_gradient_closed_form():
    r = np.random.default_rng(15)
    d = Dense(4, 1, r)
    net = Sequential([d, Sigmoid()])
    x = r.standard_normal((6, 4))
    y = np.array([0, 1, 1, 0, 1, 0.0])
    p = net.forward(x, train=True)[:, 0]
    _, dp = bce_loss(p, y)
    net.zero_grad()
    net.backward(dp[:, None])
    np.testing.assert_allclose(d.grads["W"][:, 0], x.T @ (p - y) / 6, rtol=1e-10)
    np.testing.assert_allclose(d.grads["b"][0], np.sum(p - y) / 6, rtol=1e-10)


def test_residual_block_shapes():
    r = np.random.default_rng(16)
    blk = ResidualBlock(3, 5, r)
    out = blk.forward(r.standard_normal((2, 3, 4, 3)), train=True)
    assert out.shape == (2, 5, 4, 3)
    assert np.all(out >= 0)
    assert blk.backward(np.ones_like(out)).shape == (2, 3, 4, 3)


# ---- properties

@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["dense", "conv1d", "conv2d"]), st.floats(-5, 5), st.integers(0, 2**32 - 1))
def test_linearity_without_bias(kind, a, seed):
    r = np.random.default_rng(seed)
    if kind == "dense":
        layer, shape = Dense(4, 3, r), (3, 4)
    elif kind == "conv1d":
        layer, shape = Conv1d(2, 3, 3, r, bias=False), (3, 2, 6)
    else:
        layer, shape = Conv2d(2, 3, 3, r, bias=False), (2, 2, 4, 5)
    if "b" in layer.params:
        layer.params["b"][...] = 0
    x, z = r.standard_normal(shape), r.standard_normal(shape)
    fx, fz = layer.forward(x), layer.forward(z)
    scale = max(1.0, np.abs(fx).max(), np.abs(fz).max())
    np.testing.assert_allclose(layer.forward(a * x), a * fx, rtol=0, atol=1e-10 * scale * max(1, abs(a)))
    np.testing.assert_allclose(layer.forward(x + z), fx + fz, rtol=0, atol=1e-10 * scale)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 9), st.integers(1, 9))
def test_shape_algebra(b, c, h, w):
    r = np.random.default_rng(0)
    x = r.standard_normal((b, c, h, w))
    assert Conv2d(c, 2, 3, r).forward(x).shape == (b, 2, h, w)
    assert BatchNorm(c).forward(x).shape == x.shape
    assert MaxPool2d().forward(x).shape == (b, c, -(-h // 2), -(-w // 2))
    assert Conv1d(c, 4, 3, r).forward(x[:, :, 0, :]).shape == (b, 4, w)


def test_forward_is_deterministic():
    def run():
        r = np.random.default_rng(17)
        net = Sequential([Conv2d(1, 3, 3, r), BatchNorm(3), Relu(), MaxPool2d(), Dropout(0.5, np.random.default_rng(1))])
        x = np.random.default_rng(18).standard_normal((2, 1, 5, 5))
        return net.forward(x, train=True)

    assert np.array_equal(run(), run())
