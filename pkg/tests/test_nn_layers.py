"""
Tests des couches: normalisations, pooling, attention non locale et modules.
"""
import math

import numpy as np
import pytest

from autodiff import Tensor, analytic_gradient, numerical_gradient, relative_error
from errors import ConfigError, ContractError, ShapeError
from nn_layers import (
    IBN,
    BatchNorm,
    Conv2d,
    InstanceNorm,
    Linear,
    Module,
    NonLocalBlock,
    NormState,
    Param,
    Pooling,
    batch_norm,
    ibn,
    instance_norm,
    linear,
    non_local,
    pool,
)


def as64(array, grad=False):
    return Tensor(np.asarray(array, dtype=np.float64), requires_grad=grad, dtype=np.float64)


class TestBatchNorm:
    def test_train_mode_output_is_standardized(self, rng):
        s = NormState(3, np.float64)
        x = as64(rng.normal(2.0, 3.0, size=(4, 3, 2, 2)))
        out = batch_norm(x, s).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_running_stats_use_unbiased_variance(self):
        s = NormState(1, np.float64, momentum=0.5)
        x = as64(np.array([1.0, 3.0]).reshape(2, 1, 1, 1))
        batch_norm(x, s)
        np.testing.assert_allclose(s.running_mean, [0.5 * 0.0 + 0.5 * 2.0])
        np.testing.assert_allclose(s.running_var, [0.5 * 1.0 + 0.5 * 2.0])

    def test_eval_mode_uses_running_stats(self, rng):
        s = NormState(2, np.float64)
        s.running_mean = np.array([1.0, -1.0])
        s.running_var = np.array([4.0, 9.0])
        s.train(False)
        x = as64(rng.normal(size=(1, 2, 1, 1)))
        out = batch_norm(x, s).data
        expected = (x.data - s.running_mean.reshape(1, 2, 1, 1)) / np.sqrt(s.running_var + s.eps).reshape(1, 2, 1, 1)
        np.testing.assert_allclose(out, expected)

    def test_single_value_rejected_in_train_mode(self):
        with pytest.raises(ContractError):
            batch_norm(as64(np.zeros((1, 1, 1, 1))), NormState(1, np.float64))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            batch_norm(as64(np.zeros((2, 3, 2, 2))), NormState(2, np.float64))

    def test_momentum_validated(self):
        with pytest.raises(ConfigError):
            NormState(2, momentum=1.0)

    def test_gradient(self, rng):
        s = NormState(2, np.float64)
        s.gamma.value.data[...] = [1.5, 0.5]
        x = as64(rng.normal(size=(3, 2, 2, 2)), grad=True)
        r = as64(rng.normal(size=(3, 2, 2, 2)))
        fn = lambda: (batch_norm(x, s) * r).sum()
        params = [x, s.gamma.value, s.beta.value]
        for tensor, grad in zip(params, analytic_gradient(fn, params)):
            assert relative_error(grad, numerical_gradient(fn, tensor)) < 1e-5


class TestInstanceAndIBN:
    def test_instance_norm_standardizes_each_plane(self, rng):
        s = NormState(2, np.float64, kind="instance")
        out = instance_norm(as64(rng.normal(size=(3, 2, 3, 3))), s).data
        np.testing.assert_allclose(out.mean(axis=(2, 3)), 0.0, atol=1e-10)

    def test_instance_state_has_no_buffers(self):
        assert InstanceNorm(2).named_buffers() == []
        assert [n for n, _ in BatchNorm(2).named_buffers()] == ["state.running_mean", "state.running_var"]

    def test_instance_norm_needs_two_pixels(self):
        with pytest.raises(ContractError):
            instance_norm(as64(np.zeros((2, 1, 1, 1))), NormState(1, np.float64, kind="instance"))

    def test_ibn_halves(self, rng):
        layer = IBN(4, np.float64)
        x = as64(rng.normal(size=(2, 4, 3, 3)))
        out = layer(x).data
        np.testing.assert_allclose(out[:, :2], instance_norm(as64(x.data[:, :2]), layer.instance).data)
        np.testing.assert_allclose(out[:, 2:].mean(axis=(0, 2, 3)), 0.0, atol=1e-10)

    def test_ibn_split_out_of_range(self, rng):
        with pytest.raises(ShapeError):
            IBN(4, split=4)
        s_in, s_bn = NormState(1, kind="instance"), NormState(3)
        with pytest.raises(ShapeError):
            ibn(as64(rng.normal(size=(2, 4, 2, 2))), s_in, s_bn, 0)


class TestPooling:
    def test_avg_and_max(self):
        x = as64(np.arange(8.0).reshape(1, 2, 2, 2))
        np.testing.assert_allclose(pool(x, "avg").data, [[1.5, 5.5]])
        np.testing.assert_allclose(pool(x, "max").data, [[3.0, 7.0]])

    def test_gem_with_p_one_is_average(self, rng):
        x = as64(rng.uniform(0.1, 2.0, size=(2, 3, 2, 2)))
        out = pool(x, "gem", as64(1.0)).data
        np.testing.assert_allclose(out, x.data.mean(axis=(2, 3)))

    def test_gem_approaches_max_for_large_p(self):
        x = as64(np.array([0.5, 1.0, 2.0, 1.5]).reshape(1, 1, 2, 2))
        out = pool(x, "gem", as64(200.0)).item()
        assert 1.9 < out <= 2.0

    def test_gem_exponent_clamped_to_one(self, rng):
        x = as64(rng.uniform(0.1, 2.0, size=(1, 2, 2, 2)))
        np.testing.assert_allclose(pool(x, "gem", as64(0.3)).data, pool(x, "gem", as64(1.0)).data)

    def test_gem_gradient_includes_exponent(self, rng):
        layer = Pooling("gem", np.float64)
        x = as64(rng.uniform(0.2, 2.0, size=(2, 2, 2, 2)), grad=True)
        r = as64(rng.normal(size=(2, 2)))
        fn = lambda: (layer(x) * r).sum()
        params = [x, layer.p.value]
        for tensor, grad in zip(params, analytic_gradient(fn, params)):
            assert relative_error(grad, numerical_gradient(fn, tensor)) < 1e-5

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            Pooling("median")


class TestNonLocal:
    def test_zero_init_is_identity(self, rng):
        block = NonLocalBlock(4, rng, np.float64)
        x = as64(rng.normal(size=(2, 4, 2, 3)))
        np.testing.assert_array_equal(block(x).data, x.data)

    def test_attention_rows_sum_to_one(self, rng):
        block = NonLocalBlock(4, rng, np.float64)
        _, attention = non_local(as64(rng.normal(size=(1, 4, 2, 2))), block, return_attention=True)
        assert attention.shape == (1, 4, 4)
        np.testing.assert_allclose(attention.data.sum(axis=-1), 1.0)

    def test_odd_channels_rejected(self, rng):
        with pytest.raises(ConfigError):
            NonLocalBlock(3, rng)

    def test_gradient(self, rng):
        block = NonLocalBlock(2, rng, np.float64)
        block.w_z.weight.value.data[...] = rng.normal(size=block.w_z.weight.shape)
        x = as64(rng.normal(size=(1, 2, 2, 2)), grad=True)
        r = as64(rng.normal(size=(1, 2, 2, 2)))
        fn = lambda: (block(x) * r).sum()
        params = [x, block.theta.weight.value, block.w_z.weight.value]
        for tensor, grad in zip(params, analytic_gradient(fn, params)):
            assert relative_error(grad, numerical_gradient(fn, tensor)) < 1e-5


class TestLinearAndConv:
    def test_linear_shape_check(self, rng):
        layer = Linear(3, 2, rng, dtype=np.float64)
        assert layer(as64(np.ones((4, 3)))).shape == (4, 2)
        with pytest.raises(ShapeError):
            linear(as64(np.ones((4, 2))), layer.weight)

    def test_bias_free_linear_maps_zero_to_zero(self, rng):
        layer = Linear(3, 5, rng, bias=False, std=0.01, dtype=np.float64)
        np.testing.assert_array_equal(layer(as64(np.zeros((2, 3)))).data, np.zeros((2, 5)))

    def test_conv_output_shape(self, rng):
        conv = Conv2d(3, 8, 3, rng, stride=2, padding=1)
        assert conv(Tensor(np.zeros((1, 3, 16, 16)))).shape == (1, 8, 8, 8)

    def test_he_initialization_scale(self):
        conv = Conv2d(16, 64, 3, np.random.default_rng(0), dtype=np.float64)
        assert abs(conv.weight.value.data.std() - math.sqrt(2.0 / (16 * 9))) < 0.01


class TestModule:
    class Tiny(Module):
        def __init__(self, rng):
            super().__init__()
            self.first = Linear(2, 2, rng)
            self.blocks = [BatchNorm(2), BatchNorm(2)]
            self.heads = {"a": Linear(2, 1, rng, bias=False)}
            self.scale = Param(np.ones(1, dtype=np.float32))

    def test_names_follow_declaration_order(self, rng):
        model = self.Tiny(rng)
        model.assign_names()
        names = [n for n, _ in model.named_params()]
        assert names == [
            "scale", "first.weight", "first.bias",
            "blocks.0.state.gamma", "blocks.0.state.beta",
            "blocks.1.state.gamma", "blocks.1.state.beta",
            "heads.a.weight",
        ]
        assert model.first.weight.name == "first.weight"

    def test_train_eval_propagates(self, rng):
        model = self.Tiny(rng).eval()
        assert not model.blocks[1].state.training
        assert model.train().blocks[1].state.training

    def test_load_buffer(self, rng):
        model = self.Tiny(rng)
        model.load_buffer("blocks.1.state.running_var", np.full(2, 3.0))
        np.testing.assert_array_equal(model.blocks[1].state.running_var, [3.0, 3.0])
        with pytest.raises(ContractError):
            model.load_buffer("blocks.1.state.gamma", np.ones(2))
        with pytest.raises(ContractError):
            model.load_buffer("blocks.1.state.running_var", np.ones(3))

    def test_frozen_param_is_not_updatable(self):
        p = Param(np.zeros(2))
        p.frozen = True
        assert not p.updatable
        assert not Param(np.zeros(2), trainable=False).updatable


class TestReferenceValues:
    def test_linear_small_product(self):
        w = Param(np.array([[1.0], [1.0]]))
        np.testing.assert_array_equal(linear(as64([[1.0, 2.0]]), w).data, [[3.0]])

    def test_linear_identity(self, rng):
        x = as64(rng.normal(size=(3, 4)))
        out = linear(x, Param(np.eye(4)), Param(np.zeros(4)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_batch_of_one_and_three(self):
        out = batch_norm(as64(np.array([1.0, 3.0]).reshape(2, 1, 1, 1)), NormState(1, np.float64))
        np.testing.assert_allclose(out.data.reshape(-1), [-1.0, 1.0], atol=1e-5)

    def test_constant_plane_instance_norm_is_zero(self):
        out = instance_norm(as64(np.full((1, 1, 2, 2), 5.0)), NormState(1, np.float64, kind="instance"))
        np.testing.assert_array_equal(out.data, np.zeros((1, 1, 2, 2)))

    def test_instance_norm_affine_invariance(self, rng):
        s = NormState(3, np.float64, eps=1e-12, kind="instance")
        x = rng.normal(size=(2, 3, 4, 4))
        a = rng.uniform(1.0, 3.0, size=(2, 3, 1, 1))
        b = rng.normal(size=(2, 3, 1, 1))
        np.testing.assert_allclose(instance_norm(as64(a * x + b), s).data, instance_norm(as64(x), s).data, atol=1e-5)

    def test_gem_one_on_small_plane(self):
        x = as64(np.array([[1.0, 3.0], [5.0, 7.0]]).reshape(1, 1, 2, 2))
        np.testing.assert_allclose(pool(x, "gem", as64(1.0)).item(), 4.0)

    def test_gem_large_exponent_close_to_dominant_max(self):
        x = as64(np.array([1.0, 1.0, 1.0, 0.5]).reshape(1, 1, 2, 2))
        assert abs(pool(x, "gem", as64(64.0)).item() - 1.0) < 1e-2

    def test_gem_monotone_in_exponent(self, rng):
        exponents = [1.0, 1.5, 2.0, 3.0, 5.0, 8.0]
        for _ in range(100):
            x = as64(rng.uniform(0.0, 1.0, size=(1, 1, 3, 3)))
            values = [pool(x, "gem", as64(p)).item() for p in exponents]
            assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_non_local_matches_naive_loops(self, rng):
        block = NonLocalBlock(2, rng, np.float64)
        block.w_z.weight.value.data[...] = rng.normal(size=block.w_z.weight.shape)
        block.w_z.bias.value.data[...] = rng.normal(size=2)
        x = rng.normal(size=(1, 2, 3, 3))
        out = block(as64(x)).data

        def conv1x1(layer, v):
            return layer.weight.value.data[:, :, 0, 0] @ v + layer.bias.value.data

        positions = [x[0, :, i, j] for i in range(3) for j in range(3)]
        theta = [conv1x1(block.theta, v) for v in positions]
        phi = [conv1x1(block.phi, v) for v in positions]
        g = [conv1x1(block.g, v) for v in positions]
        expected = np.zeros((1, 2, 3, 3))
        for p, v in enumerate(positions):
            scores = np.array([theta[p] @ phi[q] for q in range(9)]) / math.sqrt(1)
            weights = np.exp(scores - scores.max())
            weights /= weights.sum()
            y = sum(weights[q] * g[q] for q in range(9))
            expected[0, :, p // 3, p % 3] = conv1x1(block.w_z, y) + v
        np.testing.assert_allclose(out, expected, atol=1e-5)

    def test_ibn_gradient_through_both_halves(self, rng):
        layer = IBN(4, np.float64)
        x = as64(rng.normal(size=(2, 4, 2, 2)), grad=True)
        r = as64(rng.normal(size=(2, 4, 2, 2)))
        fn = lambda: (layer(x) * r).sum()
        grad = analytic_gradient(fn, [x])[0]
        assert relative_error(grad, numerical_gradient(fn, x)) < 1e-4
        assert np.abs(grad[:, :2]).sum() > 0 and np.abs(grad[:, 2:]).sum() > 0
