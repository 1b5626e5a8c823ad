"""Tensor, tape and primitive ops against straight-line numpy oracles."""

import numpy as np
import pytest

from mprnet.autograd import functional as F
from mprnet.autograd import Parameter, Tape, Tensor, count_ops, grad_check, inject_gradient_fault
from mprnet.errors import DimensionError, UsageError
from oracles import conv2d as conv2d_oracle


def away_from_zero(rng, shape):
    return rng.uniform(0.2, 1.0, shape) * rng.choice([-1.0, 1.0], shape)


class TestTensor:
    def test_rank_four_required(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((3, 4, 4)))

    def test_data_is_read_only(self):
        t = Tensor(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ValueError):
            t.data[0, 0, 0, 0] = 1.0

    def test_integer_input_becomes_float64(self):
        assert Tensor(np.ones((1, 1, 1, 1), dtype=int)).dtype == np.float64

    def test_item_needs_scalar(self):
        with pytest.raises(UsageError):
            Tensor(np.zeros((1, 1, 2, 1))).item()

    def test_dump_and_load_text(self, rng):
        t = Tensor(rng.normal(size=(2, 1, 3, 2)))
        text = t.dump_text()
        assert text.splitlines()[0] == "2 1 3 2"
        assert np.array_equal(Tensor.load_text(text).data, t.data)

    def test_dump_file(self, rng, tmp_path):
        t = Tensor(rng.normal(size=(1, 2, 2, 2)))
        t.dump(tmp_path / "t.txt")
        assert np.array_equal(Tensor.load_text((tmp_path / "t.txt").read_text()).data, t.data)

    def test_load_text_size_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor.load_text("1 1 2 2\n1.0 2.0 3.0\n")

    def test_parameter_assign_checks_shape(self):
        p = Parameter(np.zeros((1, 1, 2, 2)), name="w")
        with pytest.raises(DimensionError):
            p.assign(np.zeros((1, 1, 2, 3)))
        p.assign(np.ones((1, 1, 2, 2)))
        assert p.data.sum() == 4.0


class TestTape:
    def test_no_recording_without_tape(self, rng):
        x = Parameter(rng.normal(size=(1, 1, 2, 2)))
        y = F.mul(x, x)
        assert not y.requires_grad

    def test_backward_requires_scalar_root(self, rng):
        x = Parameter(rng.normal(size=(1, 1, 2, 2)))
        with Tape() as tape:
            y = F.mul(x, x)
        with pytest.raises(UsageError):
            tape.backward(y)

    def test_square_gradient(self, rng):
        x = Parameter(rng.normal(size=(1, 2, 3, 3)))
        with Tape() as tape:
            loss = F.sum_all(F.mul(x, x))
        tape.backward(loss)
        assert np.allclose(x.grad, 2 * x.data)

    def test_gradients_accumulate_until_zeroed(self, rng):
        x = Parameter(rng.normal(size=(1, 1, 2, 2)))
        with Tape() as tape:
            loss = F.sum_all(F.mul_scalar(x, 3.0))
        tape.backward(loss)
        tape.backward(loss)
        assert np.allclose(x.grad, 6.0)
        x.zero_grad()
        assert x.grad is None

    def test_shared_input_fans_in(self, rng):
        x = Parameter(rng.normal(size=(1, 1, 2, 2)))
        with Tape() as tape:
            loss = F.sum_all(F.add(F.mul(x, x), x))
        tape.backward(loss)
        assert np.allclose(x.grad, 2 * x.data + 1)

    def test_recorded_order_is_topological(self, rng):
        x = Parameter(rng.normal(size=(1, 2, 4, 4)))
        with Tape() as tape:
            F.sum_all(F.upsample_bilinear2(F.max_pool2(F.relu(x))))
        assert len(tape) == 4
        assert tape.is_topological()
        assert [e.op for e in tape.entries] == ["relu", "max_pool2", "upsample_bilinear2", "sum"]

    def test_constant_inputs_are_not_recorded(self, rng):
        a = Tensor(rng.normal(size=(1, 1, 2, 2)))
        with Tape() as tape:
            F.add(a, a)
        assert len(tape) == 0


class TestOps:
    def test_conv2d_matches_loops(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 5, 6)))
        w = Tensor(rng.normal(size=(4, 3, 3, 3)))
        b = Tensor(rng.normal(size=(1, 4, 1, 1)))
        assert np.allclose(F.conv2d(x, w, b, padding=1).data, conv2d_oracle(x.data, w.data, b.data, 1))

    def test_conv2d_stride(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 5, 5)))
        w = Tensor(rng.normal(size=(1, 1, 3, 3)))
        full = conv2d_oracle(x.data, w.data, np.zeros((1, 1, 1, 1)), 1)
        assert np.allclose(F.conv2d(x, w, stride=2, padding=1).data, full[:, :, ::2, ::2])

    def test_conv2d_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            F.conv2d(Tensor(rng.normal(size=(1, 2, 4, 4))), Tensor(rng.normal(size=(1, 3, 3, 3))))

    def test_max_pool2(self):
        x = Tensor(np.arange(16, dtype=float).reshape(1, 1, 4, 4))
        assert np.array_equal(F.max_pool2(x).data[0, 0], [[5, 7], [13, 15]])

    def test_max_pool2_tie_routes_to_first(self):
        x = Parameter(np.ones((1, 1, 2, 2)))
        with Tape() as tape:
            loss = F.sum_all(F.max_pool2(x))
        tape.backward(loss)
        assert np.array_equal(x.grad[0, 0], [[1, 0], [0, 0]])

    def test_max_pool2_odd_size(self):
        with pytest.raises(DimensionError):
            F.max_pool2(Tensor(np.zeros((1, 1, 3, 4))))

    def test_upsample_bilinear_ramp(self):
        x = Tensor(np.array([0.0, 1.0]).reshape(1, 1, 1, 2))
        assert np.allclose(F.upsample_bilinear2(x).data[0, 0, 0], [0.0, 0.25, 0.75, 1.0])

    def test_upsample_preserves_constants(self):
        x = Tensor(np.full((1, 2, 3, 5), 0.7))
        out = F.upsample_bilinear2(x)
        assert out.shape == (1, 2, 6, 10)
        assert np.allclose(out.data, 0.7)

    def test_global_avg_pool(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 4, 5)))
        assert np.allclose(F.global_avg_pool(x).data, x.data.mean(axis=(2, 3), keepdims=True))

    def test_activations(self):
        x = Tensor(np.array([-2.0, 0.0, 3.0]).reshape(1, 1, 1, 3))
        slope = Tensor(np.full((1, 1, 1, 1), 0.25))
        assert np.array_equal(F.relu(x).data.ravel(), [0.0, 0.0, 3.0])
        assert np.array_equal(F.prelu(x, slope).data.ravel(), [-0.5, 0.0, 3.0])
        assert F.sigmoid(x).data.ravel()[1] == 0.5

    def test_unknown_activation(self):
        with pytest.raises(UsageError):
            F.activation(Tensor(np.zeros((1, 1, 1, 1))), "tanh")

    def test_prelu_needs_slope(self):
        with pytest.raises(UsageError):
            F.activation(Tensor(np.zeros((1, 1, 1, 1))), "prelu")

    def test_elementwise_shape_mismatch(self):
        with pytest.raises(DimensionError):
            F.add(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 3))))

    def test_concat_and_crop_are_inverse(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 4, 6)))
        left, right = F.crop(x, 0, 0, 4, 2), F.crop(x, 0, 2, 4, 4)
        assert np.array_equal(F.concat_spatial([left, right], axis=3).data, x.data)

    def test_crop_out_of_bounds(self, rng):
        with pytest.raises(DimensionError):
            F.crop(Tensor(rng.normal(size=(1, 1, 4, 4))), 2, 0, 3, 4)

    def test_concat_channels(self, rng):
        a, b = Tensor(rng.normal(size=(1, 2, 3, 3))), Tensor(rng.normal(size=(1, 1, 3, 3)))
        assert F.concat_channels(a, b).shape == (1, 3, 3, 3)

    def test_charbonnier_value(self):
        x = Tensor(np.full((1, 1, 2, 2), 0.3))
        y = Tensor(np.full((1, 1, 2, 2), 0.7))
        assert np.isclose(F.charbonnier(x, y, 1e-3).item(), np.sqrt(0.16 + 1e-6))

    def test_charbonnier_of_equal_inputs_is_epsilon(self, rng):
        x = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        assert F.charbonnier(x, x, 1e-3).item() == 1e-3

    def test_charbonnier_lower_bound(self, rng):
        for _ in range(1000):
            x = Tensor(rng.normal(size=(1, 1, 2, 2)))
            y = Tensor(rng.normal(size=(1, 1, 2, 2)))
            assert F.charbonnier(x, y, 1e-3).item() >= 1e-3

    def test_laplacian_stencil(self):
        x = np.zeros((1, 1, 3, 3))
        x[0, 0, 1, 1] = 1.0
        expected = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=float)
        assert np.array_equal(F.laplacian(Tensor(x)).data[0, 0], expected)

    def test_laplacian_of_constant_interior_is_zero(self):
        out = F.laplacian(Tensor(np.ones((1, 1, 5, 5)))).data[0, 0]
        assert np.array_equal(out[1:-1, 1:-1], np.zeros((3, 3)))


class TestGradients:
    @pytest.fixture
    def target(self, rng):
        return Tensor(rng.normal(size=(1, 3, 6, 6)))

    def test_conv2d(self, rng, target):
        x = Parameter(rng.normal(size=(1, 2, 6, 6)))
        w = Parameter(rng.normal(size=(3, 2, 3, 3)))
        b = Parameter(rng.normal(size=(1, 3, 1, 1)))
        assert grad_check(lambda: F.sum_all(F.mul(F.conv2d(x, w, b, padding=1), target)), [x, w, b]) < 1e-4

    def test_strided_conv2d(self, rng):
        x = Parameter(rng.normal(size=(1, 2, 5, 5)))
        w = Parameter(rng.normal(size=(2, 2, 3, 3)))
        assert grad_check(lambda: F.sum_all(F.mul(F.conv2d(x, w, stride=2, padding=1),
                                                    F.conv2d(x, w, stride=2, padding=1))), [x, w]) < 1e-4

    def test_pooling_and_upsampling(self, rng):
        x = Parameter(rng.normal(size=(1, 2, 4, 6)))
        assert grad_check(lambda: F.sum_all(F.mul(F.max_pool2(x), F.max_pool2(x))), [x]) < 1e-4
        assert grad_check(lambda: F.sum_all(F.mul(F.upsample_bilinear2(x), F.upsample_bilinear2(x))), [x]) < 1e-4
        assert grad_check(lambda: F.sum_all(F.mul(F.global_avg_pool(x), F.global_avg_pool(x))), [x]) < 1e-4

    def test_activations(self, rng):
        x = Parameter(away_from_zero(rng, (1, 2, 3, 3)))
        slope = Parameter(np.full((1, 1, 1, 1), 0.25))
        for kind in ("relu", "sigmoid", "prelu"):
            def f(kind=kind):
                y = F.activation(x, kind, slope)
                return F.sum_all(F.mul(y, y))
            params = [x, slope] if kind == "prelu" else [x]
            assert grad_check(f, params) < 1e-4, kind

    def test_arithmetic_and_layout(self, rng):
        a = Parameter(rng.normal(size=(1, 2, 4, 4)))
        b = Parameter(rng.normal(size=(1, 2, 4, 4)))
        w = Parameter(rng.normal(size=(1, 2, 1, 1)))

        def f():
            mixed = F.sub(F.mul(a, b), F.mul_scalar(F.scale_channels(a, w), 0.5))
            joined = F.concat_channels(F.crop(mixed, 0, 0, 2, 4), F.crop(b, 2, 0, 2, 4))
            return F.mean_all(F.mul(joined, joined))

        assert grad_check(f, [a, b, w]) < 1e-4

    def test_concat_spatial(self, rng):
        a = Parameter(rng.normal(size=(1, 1, 2, 3)))
        b = Parameter(rng.normal(size=(1, 1, 2, 3)))
        assert grad_check(lambda: F.sum_all(F.mul(F.concat_spatial([a, b], 2), F.concat_spatial([b, a], 2))), [a, b]) < 1e-4

    def test_charbonnier_and_laplacian(self, rng, target):
        x = Parameter(rng.normal(size=(1, 3, 6, 6)))
        assert grad_check(lambda: F.charbonnier(x, target), [x], step=1e-6) < 1e-4
        assert grad_check(lambda: F.charbonnier(F.laplacian(x), F.laplacian(target)), [x], step=1e-6) < 1e-4

    def test_grad_check_rejects_float32(self):
        p = Parameter(np.zeros((1, 1, 1, 1)), dtype=np.float32)
        with pytest.raises(UsageError):
            grad_check(lambda: F.sum_all(p), [p])


class TestInstrumentation:
    def test_count_ops(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 4, 4)))
        with count_ops() as counter:
            F.sum_all(F.max_pool2(F.add(x, x)))
        assert counter.total == 3
        assert counter.by_op["add"] == 1

    def test_count_ops_nests(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 2, 2)))
        with count_ops() as outer:
            F.relu(x)
            with count_ops() as inner:
                F.relu(x)
        assert (outer.total, inner.total) == (2, 1)

    def test_gradient_fault_scales_backward(self, rng):
        x = Parameter(rng.normal(size=(1, 1, 2, 2)))
        w = Tensor(rng.normal(size=(1, 1, 1, 1)))

        def gradient():
            x.zero_grad()
            with Tape() as tape:
                loss = F.sum_all(F.conv2d(x, w))
            tape.backward(loss)
            return x.grad.copy()

        clean = gradient()
        with inject_gradient_fault("conv2d", 1.1):
            faulty = gradient()
        assert np.allclose(faulty, 1.1 * clean)
        assert np.array_equal(gradient(), clean)

    def test_gradient_fault_breaks_grad_check(self, rng):
        x = Parameter(rng.normal(size=(1, 1, 4, 4)))
        w = Parameter(rng.normal(size=(1, 1, 3, 3)))
        with inject_gradient_fault("conv2d", 1.1):
            error = grad_check(lambda: F.sum_all(F.mul(F.conv2d(x, w, padding=1), F.conv2d(x, w, padding=1))), [w])
        assert error > 1e-2
