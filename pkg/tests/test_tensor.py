"""Numeric core: forward semantics and finite-difference gradient checks."""

import numpy as np
import pytest

from mtlseg.errors import DimensionError, NumericError
from mtlseg.gradcheck import grad_check
from mtlseg.tensor import (
    Tensor,
    bilinear_upsample,
    concat,
    conv2d,
    depthwise_conv3x3,
    gelu,
    layer_norm,
    log_softmax_lastdim,
    no_grad,
    set_check_finite,
    softmax_lastdim,
    using_dtype,
)

SEEDS = (0, 1, 2)


@pytest.fixture(autouse=True)
def finite_guard():
    set_check_finite(True)
    yield
    set_check_finite(False)


def f64(seed=0):
    return np.random.default_rng(seed)


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        assert np.array_equal((eye @ eye).data, np.eye(2, dtype=np.float32))

    def test_hand_product(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[1.0], [1.0]])
        assert np.array_equal((a @ b).data.ravel(), [3.0, 7.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        with using_dtype(np.float64):
            rng = f64(seed)
            a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
            assert grad_check(lambda: (a @ b).sum(), [a, b]) <= 1e-6

    def test_batched_gradient(self):
        with using_dtype(np.float64):
            rng = f64(5)
            a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
            b = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
            w = Tensor(rng.normal(size=(2, 3, 3)))
            assert grad_check(lambda: ((a @ b) * w).sum(), [a, b]) <= 1e-6


class TestSoftmax:
    def test_uniform_on_equal_inputs(self):
        out = softmax_lastdim(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, 1 / 3)

    def test_stabilized_against_overflow(self):
        out = softmax_lastdim(Tensor([1000.0, 0.0]))
        assert np.isfinite(out.data).all()
        assert out.data[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_rows_sum_to_one(self, seed):
        x = Tensor(f64(seed).normal(size=(7, 5)))
        y = softmax_lastdim(x).data
        assert np.all(y >= 0) and np.all(y <= 1)
        assert np.allclose(y.sum(axis=-1), 1.0, atol=1e-6)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        with using_dtype(np.float64):
            rng = f64(seed)
            x = Tensor(rng.normal(size=(5,)), requires_grad=True)
            w = Tensor(rng.normal(size=(5,)))
            assert grad_check(lambda: (softmax_lastdim(x) * w).sum(), [x]) <= 1e-6

    def test_conservation_gradient_is_zero(self):
        # sum(softmax(x)) is constant 1, so the gradient vanishes.
        with using_dtype(np.float64):
            x = Tensor(f64(3).normal(size=(6,)), requires_grad=True)
            out = softmax_lastdim(x).sum()
            out.backward()
            assert np.abs(x.grad).max() < 1e-12

    @pytest.mark.parametrize("seed", SEEDS)
    def test_log_softmax_gradient(self, seed):
        with using_dtype(np.float64):
            rng = f64(seed)
            x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
            w = Tensor(rng.normal(size=(4, 3)))
            assert grad_check(lambda: (log_softmax_lastdim(x) * w).sum(), [x]) <= 1e-6


class TestGelu:
    def test_zero_fixed_point(self):
        assert gelu(Tensor([0.0])).data[0] == 0.0

    def test_asymptotics(self):
        assert gelu(Tensor([30.0])).data[0] == pytest.approx(30.0)
        assert abs(gelu(Tensor([-30.0])).data[0]) < 1e-6

    def test_tanh_form_at_one(self):
        # 0.5 * 1 * (1 + tanh(sqrt(2/pi) * (1 + 0.044715))) evaluated directly
        expected = 0.5 * (1 + np.tanh(np.sqrt(2 / np.pi) * 1.044715))
        assert gelu(Tensor([1.0])).data[0] == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        with using_dtype(np.float64):
            rng = f64(seed)
            x = Tensor(rng.normal(size=(9,)), requires_grad=True)
            w = Tensor(rng.normal(size=(9,)))
            assert grad_check(lambda: (gelu(x) * w).sum(), [x]) <= 1e-6


class TestLayerNorm:
    def test_constant_vector_maps_to_bias(self):
        gain = Tensor(np.ones(4), requires_grad=True)
        bias = Tensor(np.zeros(4), requires_grad=True)
        out = layer_norm(Tensor([5.0, 5.0, 5.0, 5.0]), gain, bias)
        assert np.allclose(out.data, 0.0)

    def test_two_point_normalization(self):
        gain = Tensor(np.ones(2))
        bias = Tensor(np.zeros(2))
        out = layer_norm(Tensor([1.0, 3.0]), gain, bias)
        expected = 1.0 / np.sqrt(1.0 + 1e-5)
        assert out.data == pytest.approx([-expected, expected], abs=1e-7)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        with using_dtype(np.float64):
            rng = f64(seed)
            x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
            gain = Tensor(rng.normal(size=(6,)), requires_grad=True)
            bias = Tensor(rng.normal(size=(6,)), requires_grad=True)
            w = Tensor(rng.normal(size=(4, 6)))
            assert grad_check(lambda: (layer_norm(x, gain, bias) * w).sum(), [x, gain, bias]) <= 1e-6


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(f64(0).normal(size=(4, 4, 1)))
        w = np.zeros((3, 3, 1, 1))
        w[1, 1, 0, 0] = 1.0
        out = conv2d(x, Tensor(w), Tensor(np.zeros(1)), stride=1, padding=1)
        assert np.allclose(out.data, x.data)

    def test_patch_embed_extents(self):
        x = Tensor(np.zeros((8, 8, 3)))
        out = conv2d(x, Tensor(np.zeros((7, 7, 3, 4))), Tensor(np.zeros(4)), stride=4, padding=3)
        assert out.shape == (2, 2, 4)

    def test_empty_output_rejected(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.zeros((2, 2, 1))), Tensor(np.zeros((5, 5, 1, 1))), Tensor(np.zeros(1)), 1, 0)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        with using_dtype(np.float64):
            rng = f64(seed)
            x = Tensor(rng.normal(size=(5, 5, 2)), requires_grad=True)
            w = Tensor(rng.normal(size=(3, 3, 2, 3)), requires_grad=True)
            b = Tensor(rng.normal(size=(3,)), requires_grad=True)
            r = Tensor(rng.normal(size=(3, 3, 3)))
            assert grad_check(lambda: (conv2d(x, w, b, 2, 1) * r).sum(), [x, w, b]) <= 1e-6

    @pytest.mark.parametrize("seed", SEEDS)
    def test_depthwise_gradient(self, seed):
        with using_dtype(np.float64):
            rng = f64(seed)
            x = Tensor(rng.normal(size=(4, 5, 3)), requires_grad=True)
            w = Tensor(rng.normal(size=(3, 3, 3)), requires_grad=True)
            b = Tensor(rng.normal(size=(3,)), requires_grad=True)
            r = Tensor(rng.normal(size=(4, 5, 3)))
            assert grad_check(lambda: (depthwise_conv3x3(x, w, b) * r).sum(), [x, w, b]) <= 1e-6


class TestBilinearUpsample:
    def test_factor_one_is_identity(self):
        x = Tensor(f64(1).normal(size=(3, 3, 2)))
        assert np.array_equal(bilinear_upsample(x, 1).data, x.data)

    def test_constant_preserved(self):
        x = Tensor(np.full((2, 3, 1), 4.25))
        out = bilinear_upsample(x, 3)
        assert out.shape == (6, 9, 1)
        assert np.allclose(out.data, 4.25)

    def test_hand_interpolated_2x2(self):
        # Source coords (o + 0.5)/2 - 0.5, clamped; corners land on corners.
        x = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]])[..., None])
        out = bilinear_upsample(x, 2).data[..., 0]
        expected = np.array(
            [
                [0.0, 0.25, 0.75, 1.0],
                [0.5, 0.75, 1.25, 1.5],
                [1.5, 1.75, 2.25, 2.5],
                [2.0, 2.25, 2.75, 3.0],
            ]
        )
        assert np.allclose(out, expected)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        with using_dtype(np.float64):
            rng = f64(seed)
            x = Tensor(rng.normal(size=(3, 2, 2)), requires_grad=True)
            w = Tensor(rng.normal(size=(6, 4, 2)))
            assert grad_check(lambda: (bilinear_upsample(x, 2) * w).sum(), [x]) <= 1e-6


class TestPlumbing:
    def test_concat_and_slicing_gradients(self):
        with using_dtype(np.float64):
            rng = f64(4)
            a = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
            b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            w = Tensor(rng.normal(size=(3, 6)))
            assert grad_check(lambda: (concat([a, b], axis=1) * w).sum(), [a, b]) <= 1e-6

    def test_reshape_transpose_gradients(self):
        with using_dtype(np.float64):
            rng = f64(6)
            a = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
            w = Tensor(rng.normal(size=(3, 2, 4)))
            assert (
                grad_check(lambda: (a.reshape(4, 3, 2).transpose(1, 2, 0) * w).sum(), [a]) <= 1e-6
            )

    def test_broadcast_add_gradient(self):
        with using_dtype(np.float64):
            rng = f64(7)
            a = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
            b = Tensor(rng.normal(size=(3,)), requires_grad=True)
            w = Tensor(rng.normal(size=(5, 3)))
            assert grad_check(lambda: ((a + b) * w).sum(), [a, b]) <= 1e-6

    def test_sum_of_inputs_gradient_is_ones(self):
        with using_dtype(np.float64):
            x = Tensor(f64(8).normal(size=(4, 4)), requires_grad=True)
            x.sum().backward()
            assert np.allclose(x.grad, 1.0)

    def test_no_grad_suppresses_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_finite_check_raises(self):
        big = Tensor(np.array([1e30], dtype=np.float32))
        with np.errstate(over="ignore"), pytest.raises(NumericError):
            big * 1e30  # overflows float32 to inf

    def test_forward_outputs_finite_on_finite_inputs(self):
        rng = f64(9)
        x = Tensor(rng.normal(size=(6, 6)).astype(np.float32))
        out = softmax_lastdim(gelu(x @ Tensor(rng.normal(size=(6, 6)).astype(np.float32))))
        assert np.isfinite(out.data).all()
