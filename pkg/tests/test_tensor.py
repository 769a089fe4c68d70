import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from exprgen.errors import BatchSizeError, ConfigurationError, DimensionError, StateError
from exprgen.gradcheck import max_relative_error, numeric_gradient
from exprgen.tensor import (
    Activation, BatchNorm, Conv2D, Dense, Dropout, Flatten, Reshape, UpSample2D,
    activation_forward, avgpool2d, batchnorm_forward, conv2d_forward, dense_forward,
    dropout_forward, sigmoid, upsample2d,
)


def layer_gradient_errors(layer, x, seed=0):
    """Max relative FD error for input and every parameter, loss = sum(R * out)."""
    rng = np.random.default_rng(seed)

    def run():
        if isinstance(layer, Dropout):
            layer.rng = np.random.default_rng(1234)
        return layer.forward(x, train=True, update_stats=False)

    R = rng.normal(size=run().shape)
    lg = layer.backward(R)
    errors = {"input": max_relative_error(lg.input_grad, numeric_gradient(lambda: float((run() * R).sum()), x))}
    for name, p in layer.params.items():
        errors[name] = max_relative_error(lg.param_grads[name], numeric_gradient(lambda: float((run() * R).sum()), p))
    return errors


def make_layers(rng):
    return [
        (Dense(5, 3, rng), rng.normal(size=(4, 5))),
        (Conv2D(2, 3, 3, rng), rng.normal(size=(2, 5, 4, 2))),
        (Conv2D(3, 2, 1, rng), rng.normal(size=(2, 3, 3, 3))),
        (UpSample2D((2, 3)), rng.normal(size=(2, 2, 2, 2))),
        (Activation("relu"), rng.normal(size=(3, 6))),
        (Activation("leaky_relu"), rng.normal(size=(3, 6))),
        (Activation("sigmoid"), rng.normal(size=(3, 6))),
        (BatchNorm(4), rng.normal(size=(5, 4))),
        (BatchNorm(3), rng.normal(size=(2, 3, 3, 3))),
        (Dropout(0.5, rng), rng.normal(size=(4, 7))),
        (Reshape((2, 3, 1)), rng.normal(size=(2, 6))),
        (Flatten(), rng.normal(size=(2, 2, 2, 2))),
    ]


class TestDense:
    def test_identity(self):
        out = dense_forward(np.array([[3.0, 4.0]]), np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(out, [[3, 4]])

    def test_by_hand(self):
        out = dense_forward(np.array([[1.0, 2.0]]), np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([1.0, 1.0]))
        np.testing.assert_array_equal(out, [[2, 5]])

    def test_full_width_noise_projection(self):
        W = np.zeros((100, 40992))
        assert dense_forward(np.random.default_rng(0).random((1, 100)), W, np.zeros(40992)).shape == (1, 40992)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
            dense_forward(np.zeros((1, 3)), np.zeros((2, 2)), np.zeros(2))

    def test_zero_upstream_gives_zero_grads(self):
        layer = Dense(3, 2)
        layer.forward(np.ones((4, 3)))
        lg = layer.backward(np.zeros((4, 2)))
        assert not lg.input_grad.any() and not lg.param_grads["W"].any() and not lg.param_grads["b"].any()


class TestConv:
    def test_identity_1x1(self):
        x = np.random.default_rng(1).normal(size=(2, 4, 5, 1))
        np.testing.assert_array_equal(conv2d_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1)), x)

    def test_ones_kernel_counts_neighbours(self):
        out = conv2d_forward(np.ones((1, 4, 4, 1)), np.ones((3, 3, 1, 1)), np.zeros(1))[0, :, :, 0]
        # direct summation: corners see 4 cells, edges 6, interior 9
        expected = np.array([[4, 6, 6, 4], [6, 9, 9, 6], [6, 9, 9, 6], [4, 6, 6, 4]])
        np.testing.assert_array_equal(out, expected)

    def test_delta_kernel_is_identity(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 5, 6, 3))
        K = np.zeros((3, 3, 3, 3))
        for c in range(3):
            K[1, 1, c, c] = 1.0
        np.testing.assert_array_equal(conv2d_forward(x, K, np.zeros(3)), x)

    def test_against_direct_loops(self):
        rng = np.random.default_rng(3)
        x, K, b = rng.normal(size=(2, 4, 5, 2)), rng.normal(size=(3, 3, 2, 3)), rng.normal(size=3)
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        ref = np.zeros((2, 4, 5, 3))
        for n in range(2):
            for i in range(4):
                for j in range(5):
                    for o in range(3):
                        ref[n, i, j, o] = (xp[n, i:i + 3, j:j + 3, :] * K[:, :, :, o]).sum() + b[o]
        np.testing.assert_allclose(conv2d_forward(x, K, b), ref, rtol=1e-12, atol=1e-12)

    def test_full_size_map_shape(self):
        x = np.zeros((1, 224, 183, 96))
        assert conv2d_forward(x, np.zeros((3, 3, 96, 48)), np.zeros(48)).shape == (1, 224, 183, 48)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            conv2d_forward(np.zeros((1, 4, 4, 1)), np.zeros((2, 2, 1, 1)), np.zeros(1))
        with pytest.raises(ConfigurationError):
            Conv2D(1, 1, 4)


class TestUpsample:
    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(1, 3, 3, 2))
        np.testing.assert_array_equal(upsample2d(x, (1, 1)), x)

    def test_breast_map(self):
        assert upsample2d(np.zeros((1, 7, 61, 2)), (32, 3)).shape == (1, 224, 183, 2)

    def test_replication(self):
        x = np.array([1.0, 2.0]).reshape(1, 1, 2, 1)
        np.testing.assert_array_equal(upsample2d(x, (2, 1))[0, :, :, 0], [[1, 2], [1, 2]])

    def test_zero_factor(self):
        with pytest.raises(ConfigurationError):
            upsample2d(np.zeros((1, 2, 2, 1)), (0, 1))

    @given(
        arrays(np.float64, (2, 3, 2, 2), elements=st.integers(-10**6, 10**6).map(float)),
        st.integers(1, 4), st.integers(1, 4),
    )
    def test_avgpool_inverts_upsample(self, x, fy, fx):
        # exact when tile sums are representable; arbitrary doubles can be off by an ulp
        np.testing.assert_array_equal(avgpool2d(upsample2d(x, (fy, fx)), (fy, fx)), x)


class TestActivations:
    def test_values(self):
        assert sigmoid(0.0) == 0.5
        assert activation_forward(np.array([-1.0]), "leaky_relu", 0.2)[0] == pytest.approx(-0.2)
        np.testing.assert_array_equal(activation_forward(np.array([-3.0, 0.0, 5.0]), "relu"), [0, 0, 5])

    def test_sigmoid_clamp_keeps_finite(self):
        out = sigmoid(np.array([-1e6, -501.0, 501.0, 1e6]))
        assert np.all(np.isfinite(out))
        assert out[0] == out[1] > 0 and out[2] == out[3] == 1.0

    def test_sigmoid_local_derivative_at_zero(self):
        layer = Activation("sigmoid")
        layer.forward(np.zeros((1, 1)))
        assert layer.backward(np.ones((1, 1))).input_grad[0, 0] == 0.25


class TestBatchNorm:
    def test_constant_batch(self):
        out, *_ = batchnorm_forward(np.full((4, 3), 7.0), np.ones(3), np.zeros(3))
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_gamma_zero(self):
        x = np.random.default_rng(0).normal(size=(4, 3))
        out, *_ = batchnorm_forward(x, np.zeros(3), np.full(3, 5.0))
        np.testing.assert_array_equal(out, 5.0)

    def test_two_point_batch(self):
        out, *_ = batchnorm_forward(np.array([[0.0], [2.0]]), np.ones(1), np.zeros(1), eps=1e-14)
        np.testing.assert_allclose(out, [[-1.0], [1.0]], rtol=1e-12)

    def test_train_needs_two_rows(self):
        with pytest.raises(BatchSizeError):
            batchnorm_forward(np.zeros((1, 3)), np.ones(3), np.zeros(3), mode="train")

    @settings(max_examples=50)
    @given(st.integers(0, 10_000))
    def test_normalized_moments(self, seed):
        x = np.random.default_rng(seed).normal(3.0, 2.0, size=(16, 5))
        _, xhat, _, _ = batchnorm_forward(x, np.ones(5), np.zeros(5), eps=1e-12)
        assert np.abs(xhat.mean(axis=0)).max() <= 1e-8
        assert np.abs(xhat.var(axis=0) - 1.0).max() <= 1e-6

    def test_running_stats(self):
        layer = BatchNorm(2)
        x = np.array([[0.0, 1.0], [2.0, 5.0]])
        layer.forward(x)
        np.testing.assert_allclose(layer.running_mean, 0.1 * x.mean(axis=0))
        np.testing.assert_allclose(layer.running_var, 0.9 + 0.1 * x.var(axis=0))
        before = layer.running_mean.copy()
        layer.forward(x, update_stats=False)
        np.testing.assert_array_equal(layer.running_mean, before)
        out = layer.forward(x[:1], train=False)
        expected = (x[:1] - layer.running_mean) / np.sqrt(layer.running_var + layer.eps)
        np.testing.assert_allclose(out, expected)


class TestDropout:
    def test_rate_zero_and_infer_identity(self):
        x = np.random.default_rng(0).normal(size=(10, 10))
        rng = np.random.default_rng(1)
        assert np.array_equal(dropout_forward(x, 0.0, "train", rng)[0], x)
        assert np.array_equal(dropout_forward(x, 0.7, "infer", rng)[0], x)

    def test_survivor_fraction(self):
        out, mask = dropout_forward(np.ones(100_000), 0.5, "train", np.random.default_rng(7))
        assert abs((mask > 0).mean() - 0.5) <= 0.01
        assert set(np.unique(out)) == {0.0, 2.0}

    def test_rate_one_rejected(self):
        with pytest.raises(ConfigurationError):
            dropout_forward(np.ones(3), 1.0, "train", np.random.default_rng(0))

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e9, 1e9)), st.floats(0, 0.99))
    def test_infer_bit_exact(self, x, rate):
        out, _ = dropout_forward(x, rate, "infer", np.random.default_rng(0))
        assert np.array_equal(out, x)


def test_backward_before_forward():
    for layer in (Dense(2, 2), Conv2D(1, 1, 3), UpSample2D((2, 2)), Activation("relu"),
                  BatchNorm(2), Dropout(0.5), Reshape((2,)), Flatten()):
        with pytest.raises(StateError):
            layer.backward(np.zeros((1, 2)))


@pytest.mark.parametrize("seed", range(3))
def test_every_layer_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for layer, x in make_layers(rng):
        errors = layer_gradient_errors(layer, x, seed)
        assert max(errors.values()) <= 1e-4, (layer, errors)


def test_batchnorm_infer_gradient():
    rng = np.random.default_rng(5)
    layer = BatchNorm(3)
    layer.running_mean, layer.running_var = rng.normal(size=3), rng.uniform(0.5, 2, size=3)
    x = rng.normal(size=(4, 3))
    R = rng.normal(size=(4, 3))
    layer.forward(x, train=False)
    lg = layer.backward(R)
    num = numeric_gradient(lambda: float((layer.forward(x, train=False) * R).sum()), x)
    assert max_relative_error(lg.input_grad, num) <= 1e-4


def test_outputs_and_grads_finite():
    rng = np.random.default_rng(9)
    for layer, x in make_layers(rng):
        out = layer.forward(x * 1e3)
        lg = layer.backward(np.ones_like(out))
        assert np.all(np.isfinite(out)) and np.all(np.isfinite(lg.input_grad))
        for name, g in lg.param_grads.items():
            assert g.shape == layer.params[name].shape
        assert lg.input_grad.shape == x.shape
