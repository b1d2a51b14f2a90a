import numpy as np
import pytest

from akinet.gradcheck import TOLERANCE, architecture_suite, gradient_check, layer_suite
from akinet.layers import BatchNorm, Conv2d, Dense, Relu, ResidualBlock, Sigmoid, Reshape
from akinet.models import ArchitectureSpec, build_model

Y4 = np.array([0.0, 1.0, 1.0, 0.0])


def test_dense_sigmoid_bce():
    r = np.random.default_rng(0)
    res = gradient_check([Dense(5, 1, r, init="xavier"), Sigmoid(), Reshape(())], r.standard_normal((4, 5)), Y4)
    assert res.max_rel_error <= TOLERANCE
    assert res.n_checked > 0


def test_conv_bn_relu():
    r = np.random.default_rng(1)
    stack = [Conv2d(2, 3, 3, r, bias=False), BatchNorm(3), Relu()]
    assert gradient_check(stack, r.standard_normal((4, 2, 4, 5)), Y4).max_rel_error <= TOLERANCE


def test_residual_block_with_projection():
    r = np.random.default_rng(2)
    res = gradient_check([ResidualBlock(2, 4, r)], r.standard_normal((4, 2, 3, 3)), Y4)
    assert res.max_rel_error <= TOLERANCE


@pytest.mark.parametrize("name", sorted(layer_suite(0)))
def test_layer_suite(name):
    stack, x, freeze = layer_suite(0)[name]
    res = gradient_check(stack, x, Y4, freeze_dropout=freeze)
    assert res.max_rel_error <= TOLERANCE, res.per_tensor


def test_detects_a_wrong_gradient():
    r = np.random.default_rng(3)
    d = Dense(4, 1, r)
    orig = d.backward

    def broken(dy):
        dx = orig(dy)
        d.grads["W"] *= 1.1
        return dx

    d.backward = broken
    res = gradient_check([d, Sigmoid(), Reshape(())], r.standard_normal((4, 4)), Y4)
    assert res.max_rel_error > 1e-2


def test_restores_running_stats():
    model = build_model(ArchitectureSpec("vgg", 8, 16, 1 / 16), 0)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    gradient_check(model, np.random.default_rng(4).standard_normal((4, 16)), Y4, per_tensor=1)
    after = model.state_dict()
    for k in before:
        assert np.array_equal(before[k], after[k]), k


def test_architecture_models_are_small():
    for name, (model, _) in architecture_suite().items():
        assert model.n_params <= 50_000, name
