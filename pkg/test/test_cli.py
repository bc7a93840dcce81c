import io
import os
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from unittest import mock

from multifit.cli.main import run_command
from multifit.tokenizer import load_model

from .toy_data import cycle_corpus


def run(*argv: str) -> tuple[int, str]:
    out = io.StringIO()
    with redirect_stdout(out), redirect_stderr(io.StringIO()):
        code = run_command(list(argv))
    return code, out.getvalue()


class TestUsage(unittest.TestCase):
    def test_no_arguments(self):
        self.assertEqual(run()[0], 1)

    def test_unknown_subcommand(self):
        self.assertEqual(run("lm-explode")[0], 1)

    def test_missing_required_flag(self):
        self.assertEqual(run("tok-train", "--corpus", "x.txt")[0], 1)

    def test_help(self):
        self.assertEqual(run("--help")[0], 0)


class TestCommands(unittest.TestCase):
    def setUp(self):
        patcher = mock.patch.dict(os.environ, {}, clear=False)
        patcher.start()
        self.addCleanup(patcher.stop)
        os.environ.pop("MULTIFIT_SEED", None)
        os.environ.pop("CONFIG_PATH", None)
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def path(self, name: str) -> str:
        return os.path.join(self.tmp.name, name)

    def test_grad_check_passes(self):
        code, out = run("grad-check")
        self.assertEqual(code, 0)
        self.assertIn("ok", out.splitlines()[-1])

    def test_speed_bench_smoke(self):
        code, out = run("speed-bench", "--vocab", "50", "--emb", "8", "--hidden", "8", "--layers", "1",
                        "--bptt", "5", "--batch", "4", "--reps", "5")
        self.assertEqual(code, 0)
        self.assertEqual([line.split("\t")[0] for line in out.splitlines()], ["qrnn", "lstm"])

    def test_speed_bench_too_few_reps(self):
        self.assertEqual(run("speed-bench", "--cell", "qrnn", "--reps", "2")[0], 1)

    def test_tokenizer_train_and_encode(self):
        corpus = self.path("corpus.txt")
        with open(corpus, "w", encoding="utf-8") as f:
            f.write("\n".join(cycle_corpus(50, seed=0)) + "\n")
        model_path = self.path("tok.model")
        code, _ = run("tok-train", "--corpus", corpus, "--out", model_path, "--vocab", "30")
        self.assertEqual(code, 0)
        self.assertEqual(load_model(model_path).kind, "subword-unigram")

        code, out = run("tok-encode", "--model", model_path, "--text", "red green blue", "--decode")
        self.assertEqual(code, 0)
        self.assertEqual(out.strip(), "red green blue")

    def test_word_tokenizer_ids(self):
        corpus = self.path("corpus.txt")
        with open(corpus, "w", encoding="utf-8") as f:
            f.write("red green\ngreen blue\n")
        model_path = self.path("tok.model")
        self.assertEqual(run("tok-train", "--corpus", corpus, "--out", model_path, "--kind", "word")[0], 0)
        code, out = run("tok-encode", "--model", model_path, "--text", "green", "--eos")
        self.assertEqual(code, 0)
        ids = [int(t) for t in out.split()]
        self.assertEqual(len(ids), 2)
        self.assertEqual(ids[-1], 2)

    def test_missing_corpus_is_data_error(self):
        self.assertEqual(run("tok-train", "--corpus", self.path("absent.txt"), "--out", self.path("t.model"))[0], 2)

    def test_undecodable_corpus_is_data_error(self):
        corpus = self.path("bad.txt")
        with open(corpus, "wb") as f:
            f.write(b"red green\nblue \xff black\n")
        out = io.StringIO()
        with redirect_stdout(io.StringIO()), redirect_stderr(out):
            code = run_command(["tok-train", "--corpus", corpus, "--out", self.path("t.model"), "--kind", "word"])
        self.assertEqual(code, 2)
        self.assertIn("line 2", out.getvalue())

    def test_unwritable_output_is_data_error(self):
        corpus = self.path("corpus.txt")
        with open(corpus, "w", encoding="utf-8") as f:
            f.write("red green\n")
        blocker = self.path("blocker")
        with open(blocker, "w", encoding="utf-8") as f:
            f.write("a file, not a directory")
        code, _ = run("tok-train", "--corpus", corpus, "--out", os.path.join(blocker, "t.model"), "--kind", "word")
        self.assertEqual(code, 2)

    def test_unwritable_metrics_is_data_error(self):
        corpus = self.path("corpus.txt")
        with open(corpus, "w", encoding="utf-8") as f:
            f.write("\n".join(cycle_corpus(20, seed=0)) + "\n")
        model_path = self.path("tok.model")
        self.assertEqual(run("tok-train", "--corpus", corpus, "--out", model_path, "--kind", "word")[0], 0)
        blocker = self.path("blocker")
        with open(blocker, "w", encoding="utf-8") as f:
            f.write("x")
        code, _ = run("lm-pretrain", "--corpus", corpus, "--tokenizer", model_path, "--out", self.path("lm.ckpt"),
                      "--metrics", os.path.join(blocker, "m.jsonl"))
        self.assertEqual(code, 2)

    def test_misspelled_override_is_config_error(self):
        code, _ = run("grad-check", "--set", "gradcheck.tolerence=1e-3")
        self.assertEqual(code, 1)

    def test_corrupt_checkpoint_is_data_error(self):
        corpus = self.path("corpus.txt")
        with open(corpus, "w", encoding="utf-8") as f:
            f.write("red green\n")
        model_path = self.path("tok.model")
        run("tok-train", "--corpus", corpus, "--out", model_path, "--kind", "word")
        broken = self.path("lm.ckpt")
        with open(broken, "wb") as f:
            f.write(b"garbage")
        code, _ = run("lm-finetune", "--checkpoint", broken, "--corpus", corpus, "--tokenizer", model_path,
                      "--out", self.path("out.ckpt"))
        self.assertEqual(code, 2)


if __name__ == "__main__":
    unittest.main()
