import unittest

import numpy as np
import numpy.testing as npt

from multifit.exception import ConfigError, ContractError, DimensionError, NumericError
from multifit.numerics import (
    OptimizerState,
    Tape,
    Tensor,
    activation,
    adam_step,
    backward,
    causal_conv_over_time,
    check_gradients,
    clip_grad_norm,
    matmul,
    precision,
)
from multifit.numerics import ops

np.random.seed(20190917)


def leaf(data, name=None):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name, dtype=np.float64)


class TestMatmul(unittest.TestCase):
    def test_identity(self):
        b = Tensor([[1, 2], [3, 4]])
        out = matmul(Tensor(np.eye(2)), b)
        npt.assert_array_equal(out.numpy(), [[1, 2], [3, 4]])

    def test_hand_computed(self):
        out = matmul(Tensor([[1, 2]]), Tensor([[3], [4]]))
        npt.assert_array_equal(out.numpy(), [[11]])

    def test_shape_mismatch_names_both_shapes(self):
        with self.assertRaises(DimensionError) as ctx:
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        self.assertIn("(2, 3) x (2, 3)", ctx.exception.error_message)

    def test_gradients_match_finite_differences(self):
        with precision(np.float64):
            a = leaf(np.random.randn(3, 4), "a")
            b = leaf(np.random.randn(4, 2), "b")
            report = check_gradients(lambda: ({"a": a, "b": b}, lambda: ops.sum(ops.tanh(matmul(a, b)))))
        self.assertLess(report.max_error, 1e-8)


class TestCausalConv(unittest.TestCase):
    def test_width_one_is_linear(self):
        x = Tensor(np.random.randn(5, 3, 4))
        w = Tensor(np.random.randn(1, 4, 6))
        bias = Tensor(np.random.randn(6))
        conv = causal_conv_over_time(x, w, bias)
        lin = ops.linear(x, Tensor(w.numpy()[0]), bias)
        npt.assert_array_equal(conv.numpy(), lin.numpy())

    def test_direct_summation(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1))
        w = Tensor(np.ones((2, 1, 1)))
        y = causal_conv_over_time(x, w, Tensor(np.zeros(1)))
        npt.assert_array_equal(y.numpy().reshape(-1), [1, 3, 5])

    def test_causality(self):
        x = np.random.randn(4, 2, 3)
        w = Tensor(np.random.randn(2, 3, 5))
        bias = Tensor(np.random.randn(5))
        before = causal_conv_over_time(Tensor(x), w, bias).numpy()
        x[1] += 10.0
        after = causal_conv_over_time(Tensor(x), w, bias).numpy()
        npt.assert_array_equal(before[0], after[0])
        self.assertFalse(np.allclose(before[1], after[1]))

    def test_history_equals_longer_input(self):
        x = np.random.randn(6, 2, 3)
        w = Tensor(np.random.randn(3, 3, 4))
        bias = Tensor(np.random.randn(4))
        full = causal_conv_over_time(Tensor(x), w, bias).numpy()
        tail = causal_conv_over_time(Tensor(x[4:]), w, bias, history=x[2:4]).numpy()
        npt.assert_allclose(tail, full[4:], rtol=1e-5, atol=1e-6)

    def test_zero_width_rejected(self):
        with self.assertRaises(ConfigError):
            causal_conv_over_time(Tensor(np.zeros((2, 1, 1))), Tensor(np.zeros((0, 1, 1))), Tensor(np.zeros(1)))

    def test_gradients(self):
        with precision(np.float64):
            x = leaf(np.random.randn(4, 2, 3), "x")
            w = leaf(np.random.randn(2, 3, 2), "w")
            bias = leaf(np.random.randn(2), "bias")
            report = check_gradients(
                lambda: ({"x": x, "w": w, "bias": bias},
                         lambda: ops.sum(ops.tanh(causal_conv_over_time(x, w, bias))))
            )
        self.assertLess(report.max_error, 1e-8)


class TestActivation(unittest.TestCase):
    def test_sigmoid_at_zero(self):
        with precision(np.float64):
            x = leaf([0.0])
            with Tape() as tape:
                y = ops.sum(activation(x, "sigmoid"))
            grads = backward(tape, y)
        self.assertEqual(y.item(), 0.5)
        npt.assert_allclose(grads[x.uid], [0.25])

    def test_tanh_at_zero(self):
        self.assertEqual(activation(Tensor([0.0]), "tanh").item(), 0.0)

    def test_unknown_kind(self):
        with self.assertRaises(ConfigError):
            activation(Tensor([0.0]), "gelu")

    def test_gradients(self):
        with precision(np.float64):
            x = leaf(np.random.randn(3, 4), "x")
            for kind in ("sigmoid", "tanh"):
                report = check_gradients(lambda: ({"x": x}, lambda: ops.sum(ops.mul(activation(x, kind), x))))
                self.assertLess(report.max_error, 1e-8, kind)


class TestBackward(unittest.TestCase):
    def test_sum_of_squares(self):
        x = leaf([1.0, 2.0])
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        grads = backward(tape, loss)
        npt.assert_allclose(grads[x.uid], [2.0, 4.0])

    def test_fan_out_accumulates(self):
        w = leaf(np.random.randn(3, 3))
        x = Tensor(np.random.randn(2, 3), dtype=np.float64)
        with Tape() as tape:
            loss = ops.sum(matmul(matmul(x, w), w))
        grads = backward(tape, loss)

        with Tape() as t1:
            l1 = ops.sum(matmul(matmul(x, w), Tensor(w.numpy(), dtype=np.float64)))
        with Tape() as t2:
            l2 = ops.sum(matmul(Tensor(x.numpy() @ w.numpy(), dtype=np.float64), w))
        npt.assert_allclose(grads[w.uid], backward(t1, l1)[w.uid] + backward(t2, l2)[w.uid])

    def test_second_backward_rejected(self):
        x = leaf([1.0])
        with Tape() as tape:
            loss = ops.sum(x)
        backward(tape, loss)
        with self.assertRaises(ContractError):
            backward(tape, loss)

    def test_non_scalar_loss_rejected(self):
        x = leaf([1.0, 2.0])
        with Tape() as tape:
            y = ops.mul(x, 2.0)
        with self.assertRaises(ContractError):
            backward(tape, y)

    def test_unreached_params_get_zero(self):
        x, unused = leaf([1.0]), leaf([5.0, 6.0])
        with Tape() as tape:
            loss = ops.sum(x)
        grads = backward(tape, loss, [x, unused])
        npt.assert_array_equal(grads[unused.uid], [0.0, 0.0])

    def test_no_recording_outside_tape(self):
        y = ops.mul(leaf([1.0]), 3.0)
        with Tape() as tape:
            pass
        self.assertEqual(len(tape), 0)
        self.assertTrue(y.requires_grad is False)

    def test_non_finite_raises(self):
        with self.assertRaises(NumericError):
            ops.power(Tensor([0.0]), -1.0)


class TestGradCheck(unittest.TestCase):
    def test_linear_regression(self):
        with precision(np.float64):
            w = leaf(np.random.randn(3, 1), "w")
            b = leaf(np.random.randn(1), "b")
            x = Tensor(np.random.randn(8, 3))
            y = Tensor(np.random.randn(8, 1))

            def loss():
                err = ops.sub(ops.linear(x, w, b), y)
                return ops.mean(ops.mul(err, err))

            report = check_gradients(lambda: ({"w": w, "b": b}, loss))
        self.assertLess(report.max_error, 1e-9)
        self.assertEqual({e.name for e in report.entries}, {"w", "b"})

    def test_zero_parameters(self):
        report = check_gradients(lambda: ({}, lambda: Tensor(1.0, dtype=np.float64)))
        self.assertEqual(report.entries, [])
        self.assertTrue(report.passed(1e-4))

    def test_requires_float64(self):
        w = Tensor(np.ones(2), requires_grad=True)
        with self.assertRaises(ContractError):
            check_gradients(lambda: ({"w": w}, lambda: ops.sum(w)))


class TestAdam(unittest.TestCase):
    def test_zero_gradient_without_decay(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        state = OptimizerState(weight_decay=0.0)
        adam_step({"p": p}, {p.uid: np.zeros(2, dtype=p.dtype)}, state, 0.1, 0.9)
        npt.assert_array_equal(p.numpy(), np.array([1.0, -2.0], dtype=p.dtype))

    def test_pure_decay(self):
        p = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
        state = OptimizerState(weight_decay=0.01)
        adam_step({"p": p}, {p.uid: np.zeros(1)}, state, 0.1, 0.9)
        npt.assert_allclose(p.numpy(), [0.999])

    def test_single_step_closed_form(self):
        p0 = np.random.randn(4)
        g = np.random.randn(4)
        p = Tensor(p0.copy(), requires_grad=True, dtype=np.float64)
        state = OptimizerState(beta2=0.99, eps=1e-8, weight_decay=0.0)
        lr, beta1 = 0.01, 0.9
        adam_step({"p": p}, {p.uid: g}, state, lr, beta1)
        m_hat = (1 - beta1) * g / (1 - beta1)
        v_hat = (1 - 0.99) * g * g / (1 - 0.99)
        npt.assert_allclose(p.numpy(), p0 - lr * m_hat / (np.sqrt(v_hat) + 1e-8))
        self.assertEqual(state.step, 1)
        self.assertEqual(state.exp_avg["p"].shape, (4,))

    def test_per_name_rates(self):
        a = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
        b = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
        grads = {a.uid: np.ones(1), b.uid: np.ones(1)}
        adam_step({"a": a, "b": b}, grads, OptimizerState(weight_decay=0.0), {"a": 0.1, "b": 0.0}, 0.9)
        self.assertLess(a.item(), 0.0)
        self.assertEqual(b.item(), 0.0)


class TestClipGradNorm(unittest.TestCase):
    def test_scales_to_max_norm(self):
        grads = {1: np.array([3.0, 0.0]), 2: np.array([4.0])}
        norm = clip_grad_norm(grads, 0.25)
        self.assertAlmostEqual(norm, 5.0)
        total = np.sqrt(sum(np.sum(g * g) for g in grads.values()))
        self.assertAlmostEqual(total, 0.25, places=5)

    def test_small_norm_untouched(self):
        grads = {1: np.array([0.1])}
        clip_grad_norm(grads, 0.25)
        npt.assert_array_equal(grads[1], [0.1])


class TestPrecision(unittest.TestCase):
    def test_default_and_override(self):
        self.assertEqual(Tensor([1.0]).dtype, np.float32)
        with precision(np.float64):
            self.assertEqual(Tensor([1.0]).dtype, np.float64)
        self.assertEqual(Tensor([1.0]).dtype, np.float32)

    def test_rejects_other_dtypes(self):
        with self.assertRaises(ContractError):
            with precision(np.int32):
                pass


if __name__ == "__main__":
    unittest.main()
