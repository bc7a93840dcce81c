import unittest

import numpy as np
import numpy.testing as npt

from multifit.exception import ConfigError, ContractError, TransferError
from multifit.network import (
    DECODER_WEIGHT,
    EMBEDDING,
    ModelConfig,
    RecurrentState,
    build_classifier,
    build_language_model,
    classifier_forward,
    classifier_logits,
    concat_pool,
    encoder_forward,
    fo_pool,
    lm_forward,
    lstm_cell_forward,
    n_classes_of,
    qrnn_layer_forward,
    transfer_encoder,
)
from multifit.network.classifier import HEAD_IN_BIAS, HEAD_OUT_BIAS, HEAD_OUT_WEIGHT
from multifit.network.parameters import Parameters
from multifit.numerics import Tape, Tensor, backward, check_gradients, precision
from multifit.numerics import ops
from multifit.training import ClassifierLearner, TrainConfig, cross_entropy
from multifit.training.data import PaddedBatch

np.random.seed(1550)

TINY = ModelConfig(vocab_size=40, emb_dim=8, hidden_dim=12, n_layers=2)


class TestFoPool(unittest.TestCase):
    def setUp(self):
        shape = (4, 2, 3)
        self.z = Tensor(np.tanh(np.random.randn(*shape)))
        self.f = Tensor(1 / (1 + np.exp(-np.random.randn(*shape))))
        self.o = Tensor(1 / (1 + np.exp(-np.random.randn(*shape))))
        self.c0 = Tensor(np.random.randn(2, 3))

    def test_saturated_forget_carries_state(self):
        ones = Tensor(np.ones(self.z.shape))
        h, c_last = fo_pool(self.z, ones, ones, self.c0)
        for t in range(4):
            npt.assert_array_equal(h.numpy()[t], self.c0.numpy())
        npt.assert_array_equal(c_last.numpy(), self.c0.numpy())

    def test_zero_forget_is_memoryless(self):
        h, _ = fo_pool(self.z, Tensor(np.zeros(self.z.shape)), self.o, self.c0)
        npt.assert_allclose(h.numpy(), self.o.numpy() * self.z.numpy(), rtol=1e-6)

    def test_matches_naive_loop(self):
        h, c_last = fo_pool(self.z, self.f, self.o, self.c0)
        c = self.c0.numpy()
        for t in range(4):
            c = self.f.numpy()[t] * c + (1 - self.f.numpy()[t]) * self.z.numpy()[t]
            npt.assert_array_equal(h.numpy()[t], self.o.numpy()[t] * c)
        npt.assert_array_equal(c_last.numpy(), c)

    def test_random_instances_match_naive_loop(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            T, B, H = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 17))
            z = np.tanh(rng.standard_normal((T, B, H))).astype(np.float32)
            f = (1 / (1 + np.exp(-rng.standard_normal((T, B, H))))).astype(np.float32)
            o = (1 / (1 + np.exp(-rng.standard_normal((T, B, H))))).astype(np.float32)
            c0 = rng.standard_normal((B, H)).astype(np.float32)
            h, c_last = fo_pool(Tensor(z), Tensor(f), Tensor(o), Tensor(c0))
            c = c0
            for t in range(T):
                c = f[t] * c + (1 - f[t]) * z[t]
                npt.assert_array_equal(h.numpy()[t], o[t] * c, err_msg=f"T={T} B={B} H={H} t={t}")
            npt.assert_array_equal(c_last.numpy(), c)

    def test_shape_mismatch(self):
        with self.assertRaises(ContractError):
            fo_pool(self.z, self.f, self.o, Tensor(np.zeros((3, 3))))


class TestQrnnLayer(unittest.TestCase):
    def test_decomposition(self):
        x = Tensor(np.random.randn(5, 2, 3))
        w = Tensor(np.random.randn(2, 3, 12))
        bias = Tensor(np.random.randn(12))
        c0 = Tensor(np.zeros((2, 4)))
        h, _ = qrnn_layer_forward(x, w, bias, c0)
        gates = ops.causal_conv_over_time(x, w, bias).numpy()
        z, f, o = np.tanh(gates[..., :4]), 1 / (1 + np.exp(-gates[..., 4:8])), 1 / (1 + np.exp(-gates[..., 8:]))
        expected, _ = fo_pool(Tensor(z), Tensor(f), Tensor(o), c0)
        npt.assert_allclose(h.numpy(), expected.numpy(), rtol=1e-5, atol=1e-6)

    def test_scalar_gated_unit(self):
        x = Tensor(np.array([[[2.0]]]))
        w = Tensor(np.array([[[0.5, -1.0, 1.0]]]))
        bias = Tensor(np.zeros(3))
        c0 = Tensor(np.array([[0.3]]))
        h, c = qrnn_layer_forward(x, w, bias, c0)
        sig = lambda v: 1 / (1 + np.exp(-v))
        z, f, o = np.tanh(1.0), sig(-2.0), sig(2.0)
        c_expected = f * 0.3 + (1 - f) * z
        self.assertAlmostEqual(c.item(), c_expected, places=6)
        self.assertAlmostEqual(h.item(), o * c_expected, places=6)

    def test_hidden_dropout_needs_rng(self):
        with self.assertRaises(ContractError):
            qrnn_layer_forward(Tensor(np.zeros((2, 1, 1))), Tensor(np.zeros((1, 1, 3))), Tensor(np.zeros(3)),
                               Tensor(np.zeros((1, 1))), hidden_dropout=0.5)

    def test_default_config(self):
        config = ModelConfig()
        self.assertEqual((config.vocab_size, config.emb_dim, config.hidden_dim, config.n_layers), (15000, 400, 1550, 4))
        self.assertEqual(config.qrnn_widths, (2, 1, 1, 1))


class TestLstm(unittest.TestCase):
    def test_zero_weights_give_zero_output(self):
        x = Tensor(np.random.randn(3, 2, 4))
        zeros = lambda *s: Tensor(np.zeros(s))
        h, (h_last, c_last) = lstm_cell_forward(x, zeros(4, 20), zeros(5, 20), zeros(20), zeros(2, 5), zeros(2, 5))
        npt.assert_array_equal(h.numpy(), 0.0)
        npt.assert_array_equal(c_last.numpy(), 0.0)

    def test_scalar_step(self):
        w_ih = Tensor(np.array([[0.1, 0.2, 0.3, 0.4]]))
        w_hh = Tensor(np.array([[0.5, -0.5, 0.25, -0.25]]))
        bias = Tensor(np.array([0.0, 0.1, 0.0, -0.1]))
        h0, c0 = Tensor(np.array([[0.2]])), Tensor(np.array([[-0.3]]))
        x = Tensor(np.array([[[1.5]]]))
        _, (h, c) = lstm_cell_forward(x, w_ih, w_hh, bias, h0, c0)
        sig = lambda v: 1 / (1 + np.exp(-v))
        pre = 1.5 * np.array([0.1, 0.2, 0.3, 0.4]) + 0.2 * np.array([0.5, -0.5, 0.25, -0.25]) + [0.0, 0.1, 0.0, -0.1]
        i, f, g, o = sig(pre[0]), sig(pre[1]), np.tanh(pre[2]), sig(pre[3])
        c_expected = f * -0.3 + i * g
        self.assertAlmostEqual(c.item(), c_expected, places=6)
        self.assertAlmostEqual(h.item(), o * np.tanh(c_expected), places=6)


class TestLanguageModel(unittest.TestCase):
    def test_parameter_count(self):
        config = ModelConfig(vocab_size=40, emb_dim=8, hidden_dim=12, n_layers=2, qrnn_widths=(1, 1))
        params = build_language_model(config, seed=0)
        expected = 40 * 8 + (8 * 36 + 36) + (12 * 24 + 24) + 40
        self.assertEqual(params.num_trainable(), expected)

    def test_decoder_is_embedding(self):
        params = build_language_model(TINY, seed=0)
        self.assertIs(params[DECODER_WEIGHT], params[EMBEDDING])
        ids = np.array([[1, 2, 3]])
        before, _ = lm_forward(params, ids, RecurrentState.zeros(TINY, 3), TINY)
        params[EMBEDDING].data[:, 0] += 1.0
        after, _ = lm_forward(params, ids, RecurrentState.zeros(TINY, 3), TINY)
        self.assertFalse(np.allclose(before.numpy(), after.numpy()))

    def test_softmax_rows_normalized(self):
        params = build_language_model(TINY, seed=1)
        ids = np.random.randint(0, 40, size=(6, 3))
        logits, _ = lm_forward(params, ids, RecurrentState.zeros(TINY, 3), TINY)
        probs = np.exp(ops.log_softmax(logits).numpy())
        npt.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)

    def test_two_windows_equal_one(self):
        for config in (TINY, ModelConfig(vocab_size=40, emb_dim=8, hidden_dim=12, n_layers=2, qrnn_widths=(3, 2)),
                       ModelConfig(vocab_size=40, emb_dim=8, hidden_dim=12, n_layers=2, cell="lstm")):
            params = build_language_model(config, seed=2)
            ids = np.random.randint(0, 40, size=(10, 2))
            full, _ = lm_forward(params, ids, RecurrentState.zeros(config, 2), config)
            first, state = lm_forward(params, ids[:4], RecurrentState.zeros(config, 2), config)
            second, _ = lm_forward(params, ids[4:], state.detach(), config)
            npt.assert_allclose(np.concatenate([first.numpy(), second.numpy()]), full.numpy(), rtol=1e-4, atol=1e-5,
                                err_msg=config.cell)

    def test_causal(self):
        params = build_language_model(TINY, seed=3)
        ids = np.random.randint(0, 40, size=(5, 1))
        before, _ = lm_forward(params, ids, RecurrentState.zeros(TINY, 1), TINY)
        ids[3, 0] = (ids[3, 0] + 1) % 40
        after, _ = lm_forward(params, ids, RecurrentState.zeros(TINY, 1), TINY)
        npt.assert_allclose(before.numpy()[:3], after.numpy()[:3], rtol=1e-6)

    def test_eval_is_deterministic(self):
        params = build_language_model(TINY, seed=4)
        ids = np.random.randint(0, 40, size=(5, 2))
        a, _ = lm_forward(params, ids, RecurrentState.zeros(TINY, 2), TINY, dropout_mult=1.0)
        b, _ = lm_forward(params, ids, RecurrentState.zeros(TINY, 2), TINY, dropout_mult=1.0)
        npt.assert_array_equal(a.numpy(), b.numpy())

    def test_training_dropout_is_seeded(self):
        params = build_language_model(TINY, seed=4)
        ids = np.random.randint(0, 40, size=(5, 2))
        run = lambda seed: lm_forward(params, ids, RecurrentState.zeros(TINY, 2), TINY, True, 1.0,
                                      np.random.default_rng(seed))[0].numpy()
        npt.assert_array_equal(run(9), run(9))
        self.assertFalse(np.allclose(run(9), run(10)))

    def test_tied_gradient_matches_finite_differences(self):
        with precision(np.float64):
            params = build_language_model(TINY, seed=5)
            ids = np.random.randint(0, 40, size=(5, 2))

            def builder():
                def loss():
                    logits, _ = lm_forward(params, ids[:-1], RecurrentState.zeros(TINY, 2), TINY)
                    return cross_entropy(logits, ids[1:])

                return params.stored(), loss

            report = check_gradients(builder)
        self.assertLess(report.max_error, 1e-4)
        self.assertIn(EMBEDDING, {e.name for e in report.entries})

    def test_tied_gradient_sums_untied_paths(self):
        ids = np.random.randint(0, 40, size=(6, 2))
        with precision(np.float64):
            tied = build_language_model(TINY, seed=6)
            untied = Parameters()
            for name, tensor in tied.stored().items():
                untied.add(name, tensor.numpy().copy())
            untied.add(DECODER_WEIGHT, tied[EMBEDDING].numpy().copy())

            def gradients(params):
                with Tape() as tape:
                    logits, _ = lm_forward(params, ids[:-1], RecurrentState.zeros(TINY, 2), TINY)
                    loss = cross_entropy(logits, ids[1:])
                return backward(tape, loss, list(params.stored().values()))

            g_tied, g_untied = gradients(tied), gradients(untied)
        npt.assert_allclose(g_tied[tied[EMBEDDING].uid],
                            g_untied[untied[EMBEDDING].uid] + g_untied[untied[DECODER_WEIGHT].uid],
                            rtol=1e-10, atol=1e-12)
        self.assertFalse(np.allclose(g_untied[untied[DECODER_WEIGHT].uid], 0.0))

    def test_single_and_double_precision_agree(self):
        for config in (TINY, ModelConfig(vocab_size=40, emb_dim=8, hidden_dim=12, n_layers=2, cell="lstm")):
            params = build_language_model(config, seed=7)
            ids = np.random.randint(0, 40, size=(6, 3))
            single, _ = lm_forward(params, ids, RecurrentState.zeros(config, 3), config)
            with precision(np.float64):
                wide = params.clone(dtype=np.float64)
                double, _ = lm_forward(wide, ids, RecurrentState.zeros(config, 3), config)
            self.assertEqual(single.dtype, np.float32)
            self.assertEqual(double.dtype, np.float64)
            npt.assert_allclose(single.numpy(), double.numpy(), rtol=1e-4, atol=1e-6, err_msg=config.cell)

    def test_bad_ids_shape(self):
        params = build_language_model(TINY, seed=0)
        with self.assertRaises(ContractError):
            lm_forward(params, np.array([1, 2]), RecurrentState.zeros(TINY, 1), TINY)

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            ModelConfig(n_layers=2, qrnn_widths=(2,))
        with self.assertRaises(ConfigError):
            ModelConfig(cell="gru")


class TestConcatPool(unittest.TestCase):
    def test_constant_sequence(self):
        h = Tensor(np.full((4, 1, 3), 0.7))
        out = concat_pool(h, np.array([4])).numpy()
        npt.assert_allclose(out, 0.7, rtol=1e-6)

    def test_single_step(self):
        h = Tensor(np.random.randn(1, 2, 3))
        out = concat_pool(h, np.array([1, 1])).numpy()
        npt.assert_array_equal(out, np.concatenate([h.numpy()[0]] * 3, axis=1))

    def test_matches_loop(self):
        h = np.random.randn(5, 3, 4)
        lengths = np.array([5, 2, 3])
        out = concat_pool(Tensor(h), lengths).numpy()
        for b, n in enumerate(lengths):
            valid = h[:n, b].astype(np.float32)
            expected = np.concatenate([valid[-1], valid.mean(axis=0), valid.max(axis=0)])
            npt.assert_allclose(out[b], expected, rtol=1e-5, atol=1e-6)

    def test_zero_length_rejected(self):
        with self.assertRaises(ContractError):
            concat_pool(Tensor(np.zeros((3, 2, 1))), np.array([3, 0]))

    def test_gradients(self):
        with precision(np.float64):
            h = Tensor(np.random.randn(5, 2, 3), requires_grad=True)
            lengths = np.array([5, 3])
            w = Tensor(np.random.randn(9, 1))
            report = check_gradients(lambda: ({"h": h}, lambda: ops.sum(ops.matmul(concat_pool(h, lengths), w))))
        self.assertLess(report.max_error, 1e-8)


class TestClassifier(unittest.TestCase):
    def test_output_shape(self):
        params = build_classifier(TINY, 4, seed=0)
        logits = classifier_forward(Tensor(np.random.randn(3, 24)), params, TINY)
        self.assertEqual(logits.shape, (3, 4))
        self.assertEqual(n_classes_of(params), 4)

    def test_zero_final_weights_give_uniform(self):
        params = build_classifier(TINY, 4, seed=0)
        params[HEAD_OUT_WEIGHT].data[...] = 0.0
        logits = classifier_forward(Tensor(np.random.randn(3, 24)), params, TINY)
        probs = np.exp(ops.log_softmax(logits).numpy())
        npt.assert_allclose(probs, 0.25, rtol=1e-6)

    def test_head_gradients(self):
        with precision(np.float64):
            params = build_classifier(TINY, 3, seed=1)
            pooled = Tensor(np.random.randn(4, 24))
            targets = np.array([0, 1, 2, 1])
            # the first bias cancels under batch statistics, its gradient is zero
            head = {n: t for n, t in params.trainable().items() if n.startswith("head.") and n != HEAD_IN_BIAS}

            def loss():
                return cross_entropy(classifier_forward(pooled, params, TINY, training=True), targets)

            report = check_gradients(lambda: (head, loss))
        self.assertLess(report.max_error, 1e-6)

    def test_needs_two_classes(self):
        with self.assertRaises(ConfigError):
            build_classifier(TINY, 1, seed=0)

    def test_pooled_width_checked(self):
        params = build_classifier(TINY, 2, seed=0)
        with self.assertRaises(ConfigError):
            classifier_forward(Tensor(np.zeros((2, 10))), params, TINY)


class TestTransfer(unittest.TestCase):
    def setUp(self):
        self.lm = build_language_model(TINY, seed=11)
        self.clf = build_classifier(TINY, 3, seed=12)
        self.head_before = self.clf[HEAD_OUT_WEIGHT].numpy().copy()
        transfer_encoder(self.lm, self.clf, TINY, TINY)

    def test_encoder_outputs_equal(self):
        ids = np.random.randint(0, 40, size=(6, 2))
        lm_h, _ = encoder_forward(self.lm, ids, RecurrentState.zeros(TINY, 2), TINY)
        clf_h, _ = encoder_forward(self.clf, ids, RecurrentState.zeros(TINY, 2), TINY)
        npt.assert_array_equal(lm_h.numpy(), clf_h.numpy())

    def test_head_not_copied(self):
        npt.assert_array_equal(self.clf[HEAD_OUT_WEIGHT].numpy(), self.head_before)
        self.assertNotIn(HEAD_OUT_BIAS, self.lm)

    def test_copy_is_by_value(self):
        self.clf[EMBEDDING].data[...] = 0.0
        self.assertFalse(np.all(self.lm[EMBEDDING].numpy() == 0.0))

    def test_training_step_moves_encoder(self):
        before = self.clf[EMBEDDING].numpy().copy()
        learner = ClassifierLearner(self.clf, TINY, TrainConfig(), seed=0)
        batch = PaddedBatch(np.random.randint(4, 40, size=(5, 3)), np.array([5, 4, 3]), np.array([0, 1, 2]))
        learner.step(batch, lr=1e-2, momentum=0.9, dropout_mult=0.5, factor=2.6, eps=0.1)
        self.assertFalse(np.array_equal(before, self.clf[EMBEDDING].numpy()))

    def test_mismatch_lists_fields(self):
        other = ModelConfig(vocab_size=40, emb_dim=8, hidden_dim=16, n_layers=2)
        with self.assertRaises(TransferError) as ctx:
            transfer_encoder(self.lm, build_classifier(other, 2, 0), TINY, other)
        self.assertEqual(ctx.exception.fields, ["hidden_dim"])


class TestClassifierLogits(unittest.TestCase):
    def test_padding_does_not_change_logits(self):
        params = build_classifier(TINY, 2, seed=3)
        short = np.array([[5], [6], [7]])
        padded = np.array([[5], [6], [7], [3], [3]])
        a = classifier_logits(params, short, np.array([3]), TINY).numpy()
        b = classifier_logits(params, padded, np.array([3]), TINY).numpy()
        npt.assert_allclose(a, b, rtol=1e-6)


if __name__ == "__main__":
    unittest.main()
