"""Autodiff core: arithmetic, broadcasting, reductions, tape discipline."""

import numpy as np
import pytest

from dgen import nn
from dgen.errors import ShapeError, StateError, TrainingError
from dgen.nn import Tensor


class TestArithmetic:
    def test_add_mul_values(self):
        a = Tensor([1.0, 2.0, 3.0])
        b = Tensor([4.0, 5.0, 6.0])
        assert np.allclose((a + b).data, [5, 7, 9])
        assert np.allclose((a * b).data, [4, 10, 18])
        assert np.allclose((a - b).data, [-3, -3, -3])
        assert np.allclose((a / b).data, [0.25, 0.4, 0.5])

    def test_sum_theta_gradient_is_ones(self):
        theta = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        theta.sum().backward()
        assert np.array_equal(theta.grad, np.ones((2, 3)))

    def test_sum_of_squares_gradient(self):
        theta = Tensor(np.array(3.0), requires_grad=True)
        (theta * theta).sum().backward()
        assert np.allclose(theta.grad, 6.0)

    def test_broadcast_gradients_reduce_correctly(self, float64):
        a = Tensor(np.random.default_rng(0).standard_normal((4, 3)), requires_grad=True)
        b = Tensor(np.random.default_rng(1).standard_normal((1, 3)), requires_grad=True)
        ((a * b).sum()).backward()
        assert a.grad.shape == (4, 3)
        assert b.grad.shape == (1, 3)
        assert np.allclose(b.grad, a.data.sum(axis=0, keepdims=True))

    def test_mean_axis(self):
        a = Tensor(np.ones((2, 5)), requires_grad=True)
        a.mean(axis=1).sum().backward()
        assert np.allclose(a.grad, 0.2)

    def test_matmul_grad(self, float64):
        rng = np.random.default_rng(2)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        (a @ b).sum().backward()
        assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T)
        assert np.allclose(b.grad, a.data.T @ np.ones((3, 2)))


class TestTapeDiscipline:
    def test_backward_requires_scalar(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            (a * 2).backward()

    def test_backward_twice_is_a_state_error(self):
        a = Tensor(np.ones(3), requires_grad=True)
        loss = (a * a).sum()
        loss.backward()
        with pytest.raises(StateError):
            loss.backward()

    def test_no_grad_suppresses_tape(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with nn.no_grad():
            out = (a * 2).sum()
        assert not out.requires_grad
        assert out._backward is None

    def test_shared_node_accumulates(self):
        a = Tensor(np.array(2.0), requires_grad=True)
        b = a * a          # 4
        loss = (b + b).sum()
        loss.backward()
        assert np.allclose(a.grad, 8.0)   # d(2a^2)/da = 4a


class TestDtypeAndFiniteness:
    def test_default_is_float32(self):
        assert Tensor(np.zeros(2)).dtype == np.float32

    def test_use_dtype_switch(self):
        with nn.use_dtype("float64"):
            assert Tensor(np.zeros(2)).dtype == np.float64
        assert Tensor(np.zeros(2)).dtype == np.float32

    def test_nonfinite_op_output_is_an_error(self, check_finite):
        a = Tensor([1.0, 0.0])
        with pytest.raises(TrainingError):
            a / Tensor([1.0, 0.0])

    def test_finite_values_pass_check(self, check_finite):
        a = Tensor([1.0, 2.0])
        assert np.all(np.isfinite((a / 2.0).data))


class TestShapeOps:
    def test_reshape_roundtrip_grad(self):
        a = Tensor(np.arange(6.0), requires_grad=True)
        a.reshape((2, 3)).sum().backward()
        assert a.grad.shape == (6,)

    def test_transpose_grad(self):
        a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        (a.transpose((1, 0)) * Tensor(np.ones((3, 2)))).sum().backward()
        assert a.grad.shape == (2, 3)

    def test_concat_splits_gradient(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 3)), requires_grad=True)
        out = nn.concat([a, b], axis=1)
        (out * 2.0).sum().backward()
        assert np.allclose(a.grad, 2.0) and a.grad.shape == (2, 2)
        assert np.allclose(b.grad, 2.0) and b.grad.shape == (2, 3)
