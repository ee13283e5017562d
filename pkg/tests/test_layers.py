"""Layer ops: spec examples, linearity/identity properties, gradient checks."""

import numpy as np
import pytest

from dgen import nn
from dgen.errors import ConfigError, ShapeError
from dgen.nn import Tensor, finite_difference_check

from oracles import naive_conv2d


class TestConv2d:
    def test_identity_kernel(self):
        x = np.arange(9.0).reshape(1, 1, 3, 3)
        w = np.ones((1, 1, 1, 1))
        y = nn.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)))
        assert np.allclose(y.data, x)

    def test_all_ones_full_sum(self):
        x = np.ones((1, 1, 2, 2))
        w = np.ones((1, 1, 2, 2))
        y = nn.conv2d(Tensor(x), Tensor(w))
        assert y.shape == (1, 1, 1, 1)
        assert np.allclose(y.data, 4.0)

    def test_matches_naive_loop_reference(self, float64, rng):
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        for stride, padding in [(1, 0), (1, 1), (2, 1)]:
            got = nn.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
            ref = naive_conv2d(x, w, b, stride=stride, padding=padding)
            assert got.shape == ref.shape
            assert np.max(np.abs(got.data - ref)) < 1e-5

    def test_output_spatial_size_formula(self):
        x = Tensor(np.zeros((1, 2, 11, 7)))
        w = Tensor(np.zeros((3, 2, 3, 3)))
        y = nn.conv2d(x, w, stride=2, padding=1)
        assert y.shape == (1, 3, (11 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1)

    def test_channel_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError) as err:
            nn.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
        assert "(1, 2, 4, 4)" in str(err.value) and "(1, 3, 3, 3)" in str(err.value)

    def test_linearity_without_bias(self, float64, rng):
        x = rng.standard_normal((1, 2, 6, 6))
        y = rng.standard_normal((1, 2, 6, 6))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        f = lambda v: nn.conv2d(Tensor(v), w, padding=1).data
        lhs = f(2.5 * x + 0.5 * y)
        rhs = 2.5 * f(x) + 0.5 * f(y)
        assert np.max(np.abs(lhs - rhs)) < 1e-5


class TestGroupNorm:
    def test_constant_input_maps_to_zero(self):
        x = Tensor(np.full((2, 4, 3, 3), 7.0))
        y = nn.group_norm(x, 2, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        assert np.max(np.abs(y.data)) < 1e-4

    def test_gamma_zero_beta_five(self, rng):
        x = Tensor(rng.standard_normal((2, 4, 3, 3)))
        y = nn.group_norm(x, 2, Tensor(np.zeros(4)), Tensor(np.full(4, 5.0)))
        assert np.allclose(y.data, 5.0)

    def test_normalized_statistics(self, float64, rng):
        x = rng.standard_normal((3, 8, 5, 5)) * 3 + 1
        y = nn.group_norm(Tensor(x), 4, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
        yr = y.reshape(3, 4, -1)
        assert np.max(np.abs(yr.mean(axis=-1))) < 1e-5
        assert np.max(np.abs(yr.var(axis=-1) - 1)) < 1e-3

    def test_indivisible_groups_rejected(self):
        with pytest.raises(ConfigError):
            nn.group_norm(Tensor(np.zeros((1, 6, 2, 2))), 4, Tensor(np.ones(6)), Tensor(np.zeros(6)))


class TestPointwiseOps:
    def test_silu_values(self):
        x = Tensor(np.array([0.0, 100.0]))
        y = nn.silu(x).data
        assert abs(y[0]) < 1e-7
        assert abs(y[1] - 100.0) < 1e-4

    def test_softmax_rows_sum_to_one(self, rng):
        y = nn.softmax(Tensor(rng.standard_normal((4, 7)))).data
        assert np.allclose(y.sum(axis=-1), 1.0, atol=1e-6)

    def test_linear_shapes_and_error(self, rng):
        x = Tensor(rng.standard_normal((5, 3)))
        w = Tensor(rng.standard_normal((2, 3)))
        assert nn.linear(x, w).shape == (5, 2)
        with pytest.raises(ShapeError):
            nn.linear(x, Tensor(rng.standard_normal((2, 4))))


class TestAttention:
    def test_single_position_returns_value(self, rng):
        q = Tensor(rng.standard_normal((2, 5, 8)))
        k = Tensor(rng.standard_normal((2, 1, 8)))
        v = Tensor(rng.standard_normal((2, 1, 8)))
        out = nn.attention(q, k, v).data
        # softmax over a single logit is 1: every query position gets v
        assert np.max(np.abs(out - np.broadcast_to(v.data, out.shape))) < 1e-6

    def test_mismatched_dims_rejected(self, rng):
        q = Tensor(rng.standard_normal((1, 4, 8)))
        with pytest.raises(ShapeError):
            nn.attention(q, Tensor(rng.standard_normal((1, 4, 6))), Tensor(rng.standard_normal((1, 4, 8))))


class TestInterpolate:
    def test_same_size_any_mode_is_identity(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        for mode in ("nearest", "bilinear"):
            assert np.array_equal(nn.interpolate(Tensor(x), (4, 4), mode).data,
                                  x.astype(np.float32))

    def test_nearest_2x_block_replicates(self):
        x = np.arange(4.0).reshape(1, 1, 2, 2)
        y = nn.interpolate(Tensor(x), (4, 4), "nearest").data[0, 0]
        assert np.array_equal(y, np.kron(x[0, 0], np.ones((2, 2))).astype(np.float32))

    def test_nearest_idempotence_up_down_up(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 4, 4)))
        up = nn.interpolate(x, (8, 8), "nearest")
        down = nn.interpolate(up, (4, 4), "nearest")
        up2 = nn.interpolate(down, (8, 8), "nearest")
        assert np.array_equal(up.data, up2.data)

    def test_empty_target_rejected(self):
        with pytest.raises(ShapeError):
            nn.interpolate(Tensor(np.zeros((1, 1, 4, 4))), (), "nearest")

    def test_bilinear_linearity(self, float64, rng):
        a = rng.standard_normal((1, 1, 6, 6))
        b = rng.standard_normal((1, 1, 6, 6))
        f = lambda v: nn.interpolate(Tensor(v), (9, 9), "bilinear").data
        assert np.max(np.abs(f(1.5 * a - 2.0 * b) - (1.5 * f(a) - 2.0 * f(b)))) < 1e-10


class TestGradientChecks:
    """Central finite differences (h=1e-3, float64) against the tape, per layer type."""

    @pytest.mark.parametrize("name", ["conv", "conv_strided", "group_norm", "linear",
                                      "silu", "softmax", "attention", "interpolate_bilinear",
                                      "interpolate_nearest"])
    def test_layer_gradients(self, name, float64):
        rng = np.random.default_rng(hash(name) % 2 ** 31)
        mix = None

        if name in ("conv", "conv_strided"):
            x = nn.random_leaf((2, 3, 6, 6), rng)
            w = nn.random_leaf((4, 3, 3, 3), rng, scale=0.5)
            b = nn.random_leaf((4,), rng)
            stride = 2 if name == "conv_strided" else 1
            fwd = lambda: nn.conv2d(x, w, b, stride=stride, padding=1)
            leaves = [x, w, b]
        elif name == "group_norm":
            x = nn.random_leaf((2, 6, 4, 4), rng)
            g = nn.random_leaf((6,), rng)
            be = nn.random_leaf((6,), rng)
            fwd = lambda: nn.group_norm(x, 3, g, be)
            leaves = [x, g, be]
        elif name == "linear":
            x = nn.random_leaf((5, 4), rng)
            w = nn.random_leaf((3, 4), rng)
            b = nn.random_leaf((3,), rng)
            fwd = lambda: nn.linear(x, w, b)
            leaves = [x, w, b]
        elif name == "silu":
            x = nn.random_leaf((4, 7), rng)
            fwd = lambda: nn.silu(x)
            leaves = [x]
        elif name == "softmax":
            x = nn.random_leaf((4, 7), rng)
            fwd = lambda: nn.softmax(x)
            leaves = [x]
        elif name == "attention":
            q = nn.random_leaf((2, 5, 8), rng)
            k = nn.random_leaf((2, 6, 8), rng)
            v = nn.random_leaf((2, 6, 8), rng)
            fwd = lambda: nn.attention(q, k, v)
            leaves = [q, k, v]
        else:
            x = nn.random_leaf((1, 2, 5, 5), rng)
            mode = "bilinear" if name.endswith("bilinear") else "nearest"
            fwd = lambda: nn.interpolate(x, (8, 8), mode)
            leaves = [x]

        sample = fwd()
        mix = Tensor(rng.uniform(0.5, 1.5, sample.shape))

        def loss():
            return (fwd() * mix).sum()

        err = finite_difference_check(loss, leaves, h=1e-3, n_coords=50, rng=rng)
        assert err < 1e-5, f"{name}: max relative FD error {err:.2e}"
