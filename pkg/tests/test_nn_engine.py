"""Tests for the numpy network layers, loss and optimizer."""

import numpy as np
import pytest

from ecog_workbench.config import ConvNetArchitecture
from ecog_workbench.decoders.convnet import build_network
from ecog_workbench.decoders.nn_engine import (
    Adam,
    BatchNorm,
    Dense,
    Dropout,
    MaxPool,
    SoftmaxCrossEntropy,
    TemporalConv,
    elu,
    gradient_check,
)
from ecog_workbench.errors import DataError

MICRO_ARCH = ConvNetArchitecture(n_filters=(2, 3, 3, 4), kernel_length=3, pool_length=2, pool_stride=2, dropout=0.5)


class TestGradients:

    def test_micro_network(self):
        rng = np.random.default_rng(31)
        net = build_network(MICRO_ARCH, n_channels=3, n_samples=90, n_classes=3, rng=rng)
        x = rng.normal(size=(4, 3, 90))
        errors = gradient_check(net, x, np.array([0, 1, 2, 1]))
        assert errors
        assert max(errors.values()) < 1e-4, errors

    def test_check_restores_running_statistics(self):
        rng = np.random.default_rng(32)
        net = build_network(MICRO_ARCH, n_channels=3, n_samples=90, n_classes=2, rng=rng)
        before = {b.name: b.values.copy() for b in net.buffers()}
        gradient_check(net, rng.normal(size=(4, 3, 90)), np.array([0, 1, 0, 1]), params=net.parameters()[-1:])
        for b in net.buffers():
            np.testing.assert_array_equal(b.values, before[b.name])

    def test_cross_entropy_gradient(self):
        loss = SoftmaxCrossEntropy()
        logits = np.array([[2.0, 0.0], [0.0, 0.0]])
        value = loss.forward(logits, np.array([0, 1]))
        assert value == pytest.approx((np.log1p(np.exp(-2.0)) + np.log(2.0)) / 2)
        np.testing.assert_allclose(loss.backward().sum(axis=1), 0.0, atol=1e-15)


class TestLayers:

    def test_temporal_conv_shape(self):
        conv = TemporalConv(5, 10, np.random.default_rng(0))
        assert conv(np.zeros((2, 16, 900))).shape == (2, 5, 16, 891)

    def test_temporal_conv_too_short(self):
        conv = TemporalConv(5, 10, np.random.default_rng(0))
        with pytest.raises(DataError):
            conv(np.zeros((1, 2, 5)))

    def test_batch_norm_train_statistics(self):
        bn = BatchNorm(2)
        x = np.random.default_rng(33).normal(loc=[[[3.0], [-1.0]]], scale=[[[2.0], [0.5]]], size=(8, 2, 50))
        out = bn.train()(x)
        np.testing.assert_allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=(0, 2)), 1.0, rtol=1e-4)
        np.testing.assert_allclose(bn.running_mean.values, 0.1 * x.mean(axis=(0, 2)))
        unbiased = x.var(axis=(0, 2), ddof=1)
        np.testing.assert_allclose(bn.running_var.values, 0.9 + 0.1 * unbiased)

    def test_batch_norm_eval_uses_running_estimates(self):
        bn = BatchNorm(1).eval()
        x = np.full((2, 1, 4), 3.0)
        np.testing.assert_allclose(bn(x), 3.0 / np.sqrt(1.0 + 1e-5))

    def test_max_pool(self):
        pool = MaxPool(2, 2)
        out = pool(np.array([[[1.0, 3.0, 2.0, 5.0, 4.0]]]))
        np.testing.assert_array_equal(out, [[[3.0, 5.0]]])
        np.testing.assert_array_equal(pool.backward(np.array([[[1.0, 1.0]]])), [[[0.0, 1.0, 0.0, 1.0, 0.0]]])

    def test_dropout_modes(self):
        dropout = Dropout(0.5, np.random.default_rng(34))
        x = np.ones((200, 200))
        np.testing.assert_array_equal(dropout.eval()(x), x)
        masked = dropout.train()(x)
        assert set(np.unique(masked).tolist()) <= {0.0, 2.0}
        assert masked.mean() == pytest.approx(1.0, abs=0.05)

    def test_elu(self):
        np.testing.assert_allclose(elu(np.array([-1.0, 0.0, 2.0])), [np.expm1(-1.0), 0.0, 2.0])

    def test_dense_shape_check(self):
        with pytest.raises(DataError):
            Dense(4, 2, np.random.default_rng(0))(np.zeros((3, 5)))


class TestAdam:

    def test_zero_gradient_leaves_parameters(self):
        layer = Dense(3, 2, np.random.default_rng(35))
        before = layer.weight.values.copy()
        optimizer = Adam(layer.parameters())
        optimizer.zero_grad()
        optimizer.step()
        np.testing.assert_array_equal(layer.weight.values, before)

    def test_first_step_size(self):
        layer = Dense(2, 1, np.random.default_rng(36))
        before = layer.weight.values.copy()
        optimizer = Adam(layer.parameters(), learning_rate=0.01)
        layer.weight.grad[...] = np.array([[5.0, -0.2]])
        optimizer.step()
        np.testing.assert_allclose(before - layer.weight.values, [[0.01, -0.01]], rtol=1e-5)

    def test_state_dict_round_trip(self):
        rng = np.random.default_rng(37)
        a = build_network(MICRO_ARCH, 3, 90, 2, rng)
        b = build_network(MICRO_ARCH, 3, 90, 2, np.random.default_rng(99))
        b.load_state_dict(a.state_dict())
        x = rng.normal(size=(2, 3, 90))
        np.testing.assert_array_equal(a.eval()(x), b.eval()(x))
