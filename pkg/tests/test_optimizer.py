"""
Tests de l'optimiseur Adam, de la planification cosinus et du gel du backbone.
"""
import math

import numpy as np
import pytest

from errors import ConfigError, ContractError
from nn_layers import Linear, Module, Param
from optimizer import Adam, AdamState, Schedule, adam_step, apply_freeze, constant_lr, cosine_lr, learning_rate


def named_param(name, values):
    return Param(np.asarray(values, dtype=np.float64), name=name)


class Toy(Module):
    def __init__(self):
        super().__init__()
        rng = np.random.default_rng(0)
        self.backbone = Linear(3, 2, rng, dtype=np.float64)
        self.head = Linear(2, 2, rng, dtype=np.float64)
        self.assign_names()


class TestAdam:
    def test_first_step(self):
        p = named_param("w", [1.0])
        p.value.grad = np.array([0.5])
        adam_step([p], AdamState(), lr=0.1)
        assert p.value.data[0] == pytest.approx(0.9, abs=1e-6)

    def test_decoupled_weight_decay(self):
        p = named_param("w", [1.0])
        p.value.grad = np.array([0.5])
        adam_step([p], AdamState(weight_decay=0.01), lr=0.1)
        assert p.value.data[0] == pytest.approx(0.9 - 0.1 * 0.01 * 0.9, abs=1e-6)

    def test_against_reference_loop(self, rng):
        p = named_param("w", rng.normal(size=4))
        st = AdamState(beta1=0.8, beta2=0.99, eps=1e-6, weight_decay=1e-3)
        theta, m, v = p.value.data.copy(), np.zeros(4), np.zeros(4)
        for t in range(1, 6):
            g = rng.normal(size=4)
            p.value.grad = g.copy()
            adam_step([p], st, lr=0.05)
            m = 0.8 * m + 0.2 * g
            v = 0.99 * v + 0.01 * g * g
            theta = theta - 0.05 * (m / (1 - 0.8 ** t)) / (np.sqrt(v / (1 - 0.99 ** t)) + 1e-6)
            theta = theta - 0.05 * 1e-3 * theta
        np.testing.assert_allclose(p.value.data, theta, rtol=1e-10)
        assert st.t == 5

    def test_frozen_and_fixed_parameters_do_not_move(self):
        frozen = named_param("a", [1.0, 2.0])
        fixed = Param(np.array([3.0]), trainable=False, name="b")
        frozen.frozen = True
        frozen.value.grad = np.array([1.0, 1.0])
        before = frozen.value.data.copy()
        st = AdamState(weight_decay=0.1)
        adam_step([frozen, fixed], st, lr=1.0)
        np.testing.assert_array_equal(frozen.value.data, before)
        assert fixed.value.data[0] == 3.0
        assert "a" not in st.m

    def test_gradient_shape_checked(self):
        p = named_param("w", [1.0, 2.0])
        p.value.grad = np.zeros(3)
        with pytest.raises(ContractError):
            adam_step([p], AdamState(), lr=0.1)

    def test_state_records(self):
        model = Toy()
        adam = Adam(model.named_params())
        names = [name for name, _ in adam.state_records()]
        assert names[:2] == ["adam.m.backbone.weight", "adam.v.backbone.weight"]
        assert len(names) == 2 * len(model.params())

    def test_load_records(self, rng):
        model = Toy()
        adam = Adam(model.named_params())
        records = {name: rng.normal(size=value.shape) for name, value in adam.state_records()}
        adam.load_records(records, t=7)
        assert adam.state.t == 7
        np.testing.assert_array_equal(adam.state.v["head.weight"], records["adam.v.head.weight"])
        del records["adam.m.head.weight"]
        with pytest.raises(ContractError):
            adam.load_records(records, t=7)


class TestSchedule:
    def test_cosine_endpoints(self):
        s = Schedule(lr_base=1e-3, lr_min=1e-5, total_steps=100)
        assert cosine_lr(0, s) == pytest.approx(1e-3)
        assert cosine_lr(50, s) == pytest.approx((1e-3 + 1e-5) / 2)
        assert cosine_lr(100, s) == pytest.approx(1e-5)
        assert cosine_lr(250, s) == 1e-5

    def test_cosine_monotone(self):
        s = Schedule(lr_base=1.0, lr_min=0.1, total_steps=40)
        rates = [cosine_lr(t, s) for t in range(41)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_cosine_formula(self):
        s = Schedule(lr_base=0.00035, lr_min=0.00035 / 45, total_steps=80)
        expected = s.lr_min + 0.5 * (s.lr_base - s.lr_min) * (1 + math.cos(math.pi * 13 / 80))
        assert cosine_lr(13, s) == pytest.approx(expected)

    def test_constant_mode(self):
        s = Schedule(lr_base=0.01, lr_min=0.001, total_steps=10, cosine=False)
        assert constant_lr(9, s) == 0.01
        assert learning_rate(9, s) == 0.01
        assert learning_rate(9, Schedule(lr_base=0.01, lr_min=0.001, total_steps=10)) < 0.01

    def test_negative_step(self):
        with pytest.raises(ContractError):
            cosine_lr(-1, Schedule(total_steps=10))

    @pytest.mark.parametrize("kwargs", [
        {"lr_base": 0.001, "lr_min": 0.01},
        {"total_steps": -1},
        {"total_steps": 10, "freeze_iters": 10},
        {"total_steps": 10, "freeze_iters": -1},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            Schedule(**kwargs)


class TestFreeze:
    def test_mask(self):
        model = Toy()
        s = Schedule(total_steps=10, freeze_iters=3)
        mask = apply_freeze(model, 2, s)
        assert mask == {"backbone.weight": False, "backbone.bias": False, "head.weight": True, "head.bias": True}
        assert all(apply_freeze(model, 3, s).values())

    def test_frozen_backbone_bit_identical(self, rng):
        model = Toy()
        adam = Adam(model.named_params(), weight_decay=5e-4)
        s = Schedule(total_steps=10, freeze_iters=2)
        before = model.backbone.weight.value.data.copy()
        head_before = model.head.weight.value.data.copy()
        for t in range(2):
            apply_freeze(model, t, s)
            for p in model.params():
                p.value.grad = rng.normal(size=p.shape)
            adam.step(learning_rate(t, s))
        np.testing.assert_array_equal(model.backbone.weight.value.data, before)
        assert not np.array_equal(model.head.weight.value.data, head_before)
        assert not np.any(adam.state.m["backbone.weight"])

        apply_freeze(model, 2, s)
        model.backbone.weight.value.grad = np.ones(model.backbone.weight.shape)
        adam.step(learning_rate(2, s))
        assert not np.array_equal(model.backbone.weight.value.data, before)
