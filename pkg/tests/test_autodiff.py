import math

import numpy as np
import pytest

from rootrank import autodiff as ad
from rootrank.autodiff import Tape, Tensor, backward, constant, grad_check


def scalarize(tape, t, weights):
    """Weighted sum so the loss is sensitive to every output entry."""
    return ad.reduce_sum(tape, ad.mul(tape, t, constant(weights)))


def check_op(build, params, tol=1e-7, h=1e-5):
    err = grad_check(build, params, h=h)
    assert err < tol, f"max relative error {err}"


class TestForwardExamples:
    def test_matmul_basic(self):
        out = ad.matmul(None, constant([[1.0, 2.0]]), constant([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_softmax_uniform(self):
        out = ad.softmax(None, constant([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_sigmoid_zero(self):
        assert ad.sigmoid(None, constant(0.0)).item() == 0.5

    def test_relu_clips(self):
        out = ad.relu(None, constant([-1.0, 2.0]))
        assert out.data.tolist() == [0.0, 2.0]

    def test_layer_norm_zero_row_maps_to_bias(self):
        gain = constant(np.ones(4))
        bias = constant(np.full(4, 0.25))
        out = ad.layer_norm(None, constant(np.zeros((2, 4))), gain, bias)
        np.testing.assert_allclose(out.data, 0.25)

    def test_generic_apply_dispatch(self):
        tape = Tape()
        out = tape.apply("add", [constant([1.0, 2.0]), constant([3.0, 4.0])])
        assert out.data.tolist() == [4.0, 6.0]
        with pytest.raises(ValueError, match="unknown op"):
            tape.apply("conv2d", [])


class TestBackwardExamples:
    def test_square_sum_gradient(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        tape = Tape()
        loss = ad.reduce_sum(tape, ad.mul(tape, x, x))
        grads = backward(tape, loss)
        np.testing.assert_allclose(grads[x], [2.0, 4.0, 6.0])

    def test_dead_relu_gradient_is_zero(self):
        x = Tensor(-5.0, requires_grad=True)
        tape = Tape()
        loss = ad.relu(tape, x)
        grads = backward(tape, loss)
        assert grads[x] == 0.0

    def test_log_sigmoid_gradient_matches_central_difference(self):
        # independent oracle: (f(w+h) - f(w-h)) / 2h at w=0
        def f(w):
            return math.log(1.0 / (1.0 + math.exp(-w)))

        h = 1e-6
        numeric = (f(h) - f(-h)) / (2 * h)

        w = Tensor(0.0, requires_grad=True)
        tape = Tape()
        loss = ad.log(tape, ad.sigmoid(tape, w))
        grads = backward(tape, loss)
        assert abs(grads[w] - 0.5) < 1e-9
        assert abs(grads[w] - numeric) < 1e-9

    def test_unreachable_leaf_gets_zero_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = Tensor([3.0, 4.0], requires_grad=True)
        tape = Tape()
        loss = ad.reduce_sum(tape, ad.mul(tape, x, x))
        grads = backward(tape, loss)
        np.testing.assert_allclose(grads[y], [0.0, 0.0])

    def test_loss_must_be_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        tape = Tape()
        out = ad.mul(tape, x, x)
        with pytest.raises(ValueError, match="scalar"):
            backward(tape, out)

    def test_loss_must_be_on_tape(self):
        tape = Tape()
        with pytest.raises(ValueError, match="not produced on this tape"):
            backward(tape, Tensor(1.0, requires_grad=True))

    def test_backward_does_not_mutate_forward_values(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.uniform(-2, 2, size=(3, 4)), requires_grad=True)
        w = constant(rng.uniform(-1, 1, size=(3, 4)))
        tape = Tape()
        mid = ad.tanh(tape, x)
        loss = scalarize(tape, mid, w.data)
        before = mid.data.copy()
        backward(tape, loss)
        assert np.array_equal(mid.data, before)
        tape2 = Tape()
        mid2 = ad.tanh(tape2, x)
        assert np.array_equal(mid2.data, before)


class TestPerOpGradients:
    """Single-op gradient checks: relative error < 1e-7 on inputs in [-2, 2]."""

    rng = np.random.default_rng(42)

    def _rand(self, *shape, low=-2.0, high=2.0):
        return self.rng.uniform(low, high, size=shape)

    def test_matmul(self):
        a = Tensor(self._rand(3, 4), requires_grad=True)
        b = Tensor(self._rand(4, 2), requires_grad=True)
        w = self._rand(3, 2)
        check_op(lambda tape, _: scalarize(tape, ad.matmul(tape, a, b), w), [a, b])

    def test_matmul_matrix_vector(self):
        a = Tensor(self._rand(3, 4), requires_grad=True)
        b = Tensor(self._rand(4), requires_grad=True)
        w = self._rand(3)
        check_op(lambda tape, _: scalarize(tape, ad.matmul(tape, a, b), w), [a, b])

    def test_add_same_shape(self):
        a = Tensor(self._rand(3, 4), requires_grad=True)
        b = Tensor(self._rand(3, 4), requires_grad=True)
        w = self._rand(3, 4)
        check_op(lambda tape, _: scalarize(tape, ad.add(tape, a, b), w), [a, b])

    def test_add_broadcast_row(self):
        a = Tensor(self._rand(3, 4), requires_grad=True)
        b = Tensor(self._rand(4), requires_grad=True)
        w = self._rand(3, 4)
        check_op(lambda tape, _: scalarize(tape, ad.add(tape, a, b), w), [a, b])

    def test_sub(self):
        a = Tensor(self._rand(2, 5), requires_grad=True)
        b = Tensor(self._rand(2, 5), requires_grad=True)
        w = self._rand(2, 5)
        check_op(lambda tape, _: scalarize(tape, ad.sub(tape, a, b), w), [a, b])

    def test_mul(self):
        a = Tensor(self._rand(4, 3), requires_grad=True)
        b = Tensor(self._rand(4, 3), requires_grad=True)
        w = self._rand(4, 3)
        check_op(lambda tape, _: scalarize(tape, ad.mul(tape, a, b), w), [a, b])

    def test_scalar_mul(self):
        a = Tensor(self._rand(4), requires_grad=True)
        w = self._rand(4)
        check_op(lambda tape, _: scalarize(tape, ad.scalar_mul(tape, a, -1.7), w), [a])

    def test_sigmoid(self):
        a = Tensor(self._rand(6), requires_grad=True)
        w = self._rand(6)
        check_op(lambda tape, _: scalarize(tape, ad.sigmoid(tape, a), w), [a])

    def test_tanh(self):
        a = Tensor(self._rand(2, 3), requires_grad=True)
        w = self._rand(2, 3)
        check_op(lambda tape, _: scalarize(tape, ad.tanh(tape, a), w), [a])

    def test_relu_away_from_kink(self):
        vals = self._rand(8)
        vals[np.abs(vals) < 0.2] += 0.5
        a = Tensor(vals, requires_grad=True)
        w = self._rand(8)
        check_op(lambda tape, _: scalarize(tape, ad.relu(tape, a), w), [a])

    def test_softmax_vector(self):
        a = Tensor(self._rand(5), requires_grad=True)
        w = self._rand(5)
        check_op(lambda tape, _: scalarize(tape, ad.softmax(tape, a), w), [a])

    def test_softmax_matrix_columns(self):
        a = Tensor(self._rand(4, 3), requires_grad=True)
        w = self._rand(4, 3)
        check_op(lambda tape, _: scalarize(tape, ad.softmax(tape, a, axis=0), w), [a])

    def test_concat(self):
        a = Tensor(self._rand(3, 2), requires_grad=True)
        b = Tensor(self._rand(3, 3), requires_grad=True)
        w = self._rand(3, 5)
        check_op(lambda tape, _: scalarize(tape, ad.concat(tape, a, b), w), [a, b])

    def test_split(self):
        a = Tensor(self._rand(2, 6), requires_grad=True)
        w = self._rand(2, 2)

        def build(tape, _):
            parts = ad.split(tape, a, 3)
            return scalarize(tape, ad.mul(tape, parts[0], parts[2]), w)

        check_op(build, [a])

    def test_transpose(self):
        a = Tensor(self._rand(3, 4), requires_grad=True)
        w = self._rand(4, 3)
        check_op(lambda tape, _: scalarize(tape, ad.transpose(tape, a), w), [a])

    def test_sum_axis(self):
        a = Tensor(self._rand(3, 4), requires_grad=True)
        w = self._rand(4)
        check_op(lambda tape, _: scalarize(tape, ad.reduce_sum(tape, a, axis=0), w), [a])

    def test_log(self):
        a = Tensor(self._rand(5, low=0.5, high=2.0), requires_grad=True)
        w = self._rand(5)
        check_op(lambda tape, _: scalarize(tape, ad.log(tape, a), w), [a])

    def test_layer_norm(self):
        a = Tensor(self._rand(3, 6), requires_grad=True)
        gain = Tensor(self._rand(6, low=0.5, high=1.5), requires_grad=True)
        bias = Tensor(self._rand(6), requires_grad=True)
        w = self._rand(3, 6)
        check_op(
            lambda tape, _: scalarize(tape, ad.layer_norm(tape, a, gain, bias), w),
            [a, gain, bias],
            tol=1e-6,
        )

    def test_clamp_unit_interval(self):
        a = Tensor(np.array([0.3, 0.7]), requires_grad=True)
        w = self._rand(2)
        check_op(lambda tape, _: scalarize(tape, ad.clamp_unit_interval(tape, a), w), [a])


class TestSoftmaxProperties:
    def test_sums_to_one(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = constant(rng.uniform(-10, 10, size=rng.integers(1, 9)))
            p = ad.softmax(None, x).data
            assert abs(p.sum() - 1.0) < 1e-12

    def test_shift_invariance(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            x = rng.uniform(-5, 5, size=6)
            c = rng.uniform(-100, 100)
            p1 = ad.softmax(None, constant(x)).data
            p2 = ad.softmax(None, constant(x + c)).data
            np.testing.assert_allclose(p1, p2, atol=1e-12)


class TestGradCheck:
    def test_quadratic_form(self):
        rng = np.random.default_rng(11)
        a_mat = rng.uniform(-1, 1, size=(4, 4))
        x = Tensor(rng.uniform(-2, 2, size=(1, 4)), requires_grad=True)

        def build(tape, _):
            xa = ad.matmul(tape, x, constant(a_mat))
            return ad.reduce_sum(tape, ad.mul(tape, xa, x))

        assert grad_check(build, [x]) < 1e-7

    def test_constant_function(self):
        x = Tensor([1.0, 2.0], requires_grad=True)

        def build(tape, _):
            y = ad.mul(tape, x, constant([0.0, 0.0]))
            return ad.reduce_sum(tape, y)

        assert grad_check(build, [x]) < 1e-9


class TestErrors:
    def test_shape_mismatch_matmul(self):
        with pytest.raises(ValueError, match="matmul"):
            ad.matmul(None, constant([[1.0, 2.0]]), constant([[1.0, 2.0]]))

    def test_log_zero_is_nonfinite(self):
        with pytest.raises(FloatingPointError):
            ad.log(None, constant([0.0]))

    def test_rank3_rejected(self):
        with pytest.raises(ValueError, match="rank"):
            Tensor(np.zeros((2, 2, 2)))

    def test_nonfinite_input_rejected(self):
        with pytest.raises(FloatingPointError):
            Tensor([np.nan])

    def test_split_requires_divisible(self):
        with pytest.raises(ValueError, match="split"):
            ad.split(None, constant(np.zeros((2, 5))), 2)


class TestDeterminism:
    def test_same_inputs_bitwise_identical(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(-2, 2, size=(6, 6))
        b = rng.uniform(-2, 2, size=(6, 6))

        def run():
            tape = Tape()
            ta = Tensor(a.copy(), requires_grad=True)
            out = ad.matmul(tape, ta, constant(b.copy()))
            loss = ad.reduce_sum(tape, ad.mul(tape, out, out))
            grads = backward(tape, loss)
            return loss.item(), grads[ta].copy()

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        assert np.array_equal(g1, g2)
