"""
Tests du module autodiff: tenseurs, bande, opérations et gradients.
"""
import numpy as np
import pytest

from autodiff import Tape, Tensor, alloc, analytic_gradient, no_grad, numerical_gradient, ops, relative_error
from errors import AllocationError, ConfigError, ContractError, DomainError, NumericError, ShapeError


def param(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True, dtype=np.float64)


def away_from_zero(rng, *shape, margin=0.2):
    values = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(values, requires_grad=True, dtype=np.float64)


def fixed(rng, *shape):
    return Tensor(rng.normal(size=shape), dtype=np.float64)


def check_gradients(fn, tensors, tol=1e-5):
    analytic = analytic_gradient(fn, tensors)
    for tensor, grad in zip(tensors, analytic):
        numeric = numerical_gradient(fn, tensor)
        assert relative_error(grad, numeric) < tol


class TestTensor:
    def test_integer_input_becomes_float32(self):
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float32

    def test_numpy_ufuncs_are_refused(self):
        with pytest.raises(TypeError):
            np.add(Tensor([1.0]), 1.0)

    def test_alloc_gaussian_is_seeded(self):
        a = alloc((3, 4), "gaussian", seed=7, dtype=np.float64)
        b = alloc((3, 4), "gaussian", seed=7, dtype=np.float64)
        np.testing.assert_array_equal(a.data, b.data)

    def test_alloc_constant(self):
        t = alloc((2, 2), "constant", value=2.5)
        np.testing.assert_array_equal(t.data, np.full((2, 2), 2.5, dtype=np.float32))

    def test_alloc_errors(self):
        with pytest.raises(ShapeError):
            alloc((-1, 2))
        with pytest.raises(DomainError):
            alloc((2,), "gaussian", std=-1.0)
        with pytest.raises(ConfigError):
            alloc((2,), "uniform")
        with pytest.raises(AllocationError):
            alloc((2 ** 40, 2 ** 40), dtype=np.float64)


class TestTape:
    def test_nothing_recorded_outside_a_tape(self, rng):
        x = param(rng, 3)
        y = (x * x).sum()
        assert y.tape_node is None
        assert not y.requires_grad

    def test_no_grad_inside_tape(self, rng):
        x = param(rng, 3)
        with Tape(64) as tape:
            with no_grad():
                y = (x * x).sum()
            z = (x * 2.0).sum()
        assert y.tape_node is None
        assert len(tape.nodes) == 2
        assert z.tape_node is not None

    def test_backward_of_square(self):
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True, dtype=np.float64)
        with Tape(64) as tape:
            y = (x * x).sum()
        tape.backward(y)
        np.testing.assert_allclose(x.grad, [2.0, -4.0, 6.0])

    def test_fan_out_accumulates(self):
        x = Tensor([2.0], requires_grad=True, dtype=np.float64)
        with Tape(64) as tape:
            y = (x * 3.0 + x * x).sum()
        tape.backward(y)
        np.testing.assert_allclose(x.grad, [7.0])

    def test_tape_consumed_after_backward(self, rng):
        x = param(rng, 2)
        with Tape(64) as tape:
            y = (x * x).sum()
        tape.backward(y)
        with pytest.raises(ContractError):
            tape.backward(y)

    def test_non_scalar_root_rejected(self, rng):
        x = param(rng, 2)
        with Tape(64) as tape:
            y = x * x
        with pytest.raises(ContractError):
            tape.backward(y)

    def test_precision_validated(self):
        with pytest.raises(ConfigError):
            Tape(16)


class TestOps:
    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_scalar_operand_broadcasts(self):
        out = ops.mul(Tensor(np.ones((2, 2))), 3.0)
        np.testing.assert_array_equal(out.data, np.full((2, 2), 3.0))

    def test_log_domain(self):
        with pytest.raises(DomainError):
            ops.log(Tensor([0.0, 1.0]))

    def test_sqrt_domain(self):
        with pytest.raises(DomainError):
            ops.sqrt(Tensor([-1.0]))

    def test_elementwise_dispatch(self):
        x = Tensor([1.0, 4.0], dtype=np.float64)
        np.testing.assert_allclose(ops.elementwise("sqrt", x).data, [1.0, 2.0])
        np.testing.assert_allclose(ops.elementwise("pow", x, k=2).data, [1.0, 16.0])
        with pytest.raises(ContractError):
            ops.elementwise("tanh", x)

    def test_matmul_values_and_errors(self):
        a = Tensor(np.arange(6).reshape(2, 3), dtype=np.float64)
        b = Tensor(np.arange(12).reshape(3, 4), dtype=np.float64)
        np.testing.assert_array_equal(ops.matmul(a, b).data, a.data @ b.data)
        with pytest.raises(ShapeError):
            ops.matmul(a, a)

    def test_conv2d_matches_naive_loops(self, rng):
        x = rng.normal(size=(2, 3, 6, 5))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out = ops.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                         Tensor(b, dtype=np.float64), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        expected = np.zeros((2, 4, 3, 3))
        for n in range(2):
            for f in range(4):
                for i in range(3):
                    for j in range(3):
                        patch = xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                        expected[n, f, i, j] = (patch * w[f]).sum() + b[f]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_conv2d_channel_mismatch(self):
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_max_gradient_goes_to_first_argmax(self):
        x = Tensor([[1.0, 3.0, 3.0], [2.0, 0.0, 2.0]], requires_grad=True, dtype=np.float64)
        with Tape(64) as tape:
            y = ops.reduce("max", x, axes=1).sum()
        tape.backward(y)
        np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])

    def test_empty_reductions(self):
        empty = Tensor(np.zeros((0, 3)))
        with pytest.raises(DomainError):
            ops.reduce("mean", empty, axes=0)
        with pytest.raises(DomainError):
            ops.reduce("max", empty, axes=0)

    def test_reshape_and_slice_errors(self):
        x = Tensor(np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            ops.reshape(x, (4, 2))
        with pytest.raises(ShapeError):
            ops.slice_axis(x, 1, 2, 4)
        with pytest.raises(ShapeError):
            ops.concat([])
        with pytest.raises(ShapeError):
            ops.expand(x, (3, 3))

    def test_reshape_infers_one_axis(self):
        x = Tensor(np.arange(6.0))
        assert ops.reshape(x, (-1, 2)).shape == (3, 2)

    def test_softmax_rows_sum_to_one(self, rng):
        x = Tensor(rng.normal(size=(4, 5)) * 50, dtype=np.float64)
        np.testing.assert_allclose(ops.softmax(x, axis=1).data.sum(axis=1), 1.0)
        np.testing.assert_allclose(np.exp(ops.log_softmax(x, axis=1).data), ops.softmax(x, axis=1).data)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_softmax_family_rejects_non_finite(self, bad):
        x = Tensor(np.array([[0.5, bad, 1.0]]), dtype=np.float64)
        with pytest.raises(NumericError):
            ops.softmax(x, axis=1)
        with pytest.raises(NumericError):
            ops.log_softmax(x, axis=1)

    def test_pick(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(ops.pick(x, [2, 0]).data, [2.0, 3.0])


@pytest.mark.parametrize("seed", range(50))
class TestGradients:
    """Différences finies centrées en 64 bits, h = 1e-5, sur 50 tirages par opération."""

    @pytest.fixture
    def rng(self, seed):
        return np.random.default_rng(seed)

    def test_binary_ops(self, rng):
        a = param(rng, 3, 4)
        b = away_from_zero(rng, 3, 4)
        r = fixed(rng, 3, 4)
        for op in (ops.add, ops.sub, ops.mul, ops.div):
            check_gradients(lambda: (op(a, b) * r).sum(), [a, b])

    def test_scalar_operand(self, rng):
        a = param(rng, 3)
        s = Tensor(0.7, requires_grad=True, dtype=np.float64)
        check_gradients(lambda: (a * s + s).sum(), [a, s])

    def test_unary_ops(self, rng):
        r = fixed(rng, 5)
        positive = param(rng, 5, low=0.5, high=2.0)
        signed = away_from_zero(rng, 5)
        check_gradients(lambda: (ops.exp(signed) * r).sum(), [signed])
        check_gradients(lambda: (ops.log(positive) * r).sum(), [positive])
        check_gradients(lambda: (ops.sqrt(positive) * r).sum(), [positive])
        check_gradients(lambda: (ops.power(positive, 2.5) * r).sum(), [positive])
        check_gradients(lambda: (ops.relu(signed) * r).sum(), [signed])
        check_gradients(lambda: (ops.softplus(signed) * r).sum(), [signed])
        check_gradients(lambda: (ops.clamp_min(signed, 0.0) * r).sum(), [signed])
        check_gradients(lambda: (ops.neg(signed) * r).sum(), [signed])

    def test_matmul(self, rng):
        a, b = param(rng, 3, 4), param(rng, 4, 2)
        r = fixed(rng, 3, 2)
        check_gradients(lambda: (ops.matmul(a, b) * r).sum(), [a, b])
        a3, b3 = param(rng, 2, 3, 4), param(rng, 2, 4, 2)
        r3 = fixed(rng, 2, 3, 2)
        check_gradients(lambda: (ops.matmul(a3, b3) * r3).sum(), [a3, b3])

    def test_conv2d(self, rng):
        x, w, b = param(rng, 2, 3, 5, 5), param(rng, 4, 3, 3, 3), param(rng, 4)
        r = fixed(rng, 2, 4, 3, 3)
        check_gradients(lambda: (ops.conv2d(x, w, b, stride=2, padding=1) * r).sum(), [x, w, b])

    def test_reductions(self, rng):
        x = Tensor(rng.permutation(24).reshape(2, 3, 4).astype(np.float64) / 10, requires_grad=True)
        r = fixed(rng, 2, 4)
        check_gradients(lambda: (ops.reduce("sum", x, axes=1) * r).sum(), [x])
        check_gradients(lambda: (ops.reduce("mean", x, axes=1) * r).sum(), [x])
        check_gradients(lambda: (ops.reduce("max", x, axes=1) * r).sum(), [x])

    def test_views(self, rng):
        x = param(rng, 2, 3)
        y = param(rng, 2, 2)
        check_gradients(lambda: (ops.transpose(x, (1, 0)) * fixed(np.random.default_rng(1), 3, 2)).sum(), [x])
        check_gradients(lambda: (ops.reshape(x, (3, 2)) * fixed(np.random.default_rng(2), 3, 2)).sum(), [x])
        check_gradients(lambda: (ops.slice_axis(x, 1, 1, 3) * fixed(np.random.default_rng(3), 2, 2)).sum(), [x])
        check_gradients(lambda: (ops.concat([x, y], axis=1) * fixed(np.random.default_rng(4), 2, 5)).sum(), [x, y])
        row = param(rng, 1, 3)
        check_gradients(lambda: (ops.expand(row, (4, 3)) * fixed(np.random.default_rng(5), 4, 3)).sum(), [row])

    def test_softmax_family(self, rng):
        x = param(rng, 3, 5)
        r = fixed(rng, 3, 5)
        check_gradients(lambda: (ops.softmax(x, axis=1) * r).sum(), [x])
        check_gradients(lambda: (ops.log_softmax(x, axis=1) * r).sum(), [x])

    def test_pick(self, rng):
        x = param(rng, 4, 3)
        r = fixed(rng, 4)
        check_gradients(lambda: (ops.pick(x, [0, 2, 1, 2]) * r).sum(), [x])

    def test_standardize(self, rng):
        x = param(rng, 3, 2, 2, 2)
        r = fixed(rng, 3, 2, 2, 2)
        check_gradients(lambda: (ops.standardize(x, (0, 2, 3), 1e-5)[0] * r).sum(), [x])
