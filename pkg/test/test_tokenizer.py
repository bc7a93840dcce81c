import itertools
import math
import os
import random
import tempfile
import unittest

import numpy as np
import numpy.testing as npt

from multifit.exception import ConfigError, ContractError, IngestionError
from multifit.tokenizer import (
    META,
    TokenizerModel,
    UnigramTrainer,
    build_word_model,
    decode,
    encode,
    load_model,
    model_hash,
    save_model,
    train_unigram,
    viterbi_segment,
    word_tokenize,
)
from multifit.tokenizer.model import SPECIAL_PIECES, assemble, pre_split
from multifit.tokenizer.unigram import SEGMENT_CACHE_WORDS, _segment_word

random.seed(7)

CORPUS = [
    "the cat sat on the mat",
    "the dog sat on the log",
    "a cat and a dog met on the mat",
    "the bird sang on the branch",
    "cats and dogs and birds",
] * 4


def toy_model(pieces: dict[str, float]) -> TokenizerModel:
    return assemble([(p, math.log(v)) for p, v in pieces.items()], "subword-unigram", 1.0)


def all_segmentations(text: str, vocab: set[str]):
    if not text:
        yield ()
        return
    for end in range(1, len(text) + 1):
        head = text[:end]
        if head in vocab:
            for rest in all_segmentations(text[end:], vocab):
                yield (head,) + rest


class TestViterbi(unittest.TestCase):
    def test_prefers_whole_piece(self):
        model = toy_model({"a": 0.5, "b": 0.3, "ab": 0.2})
        seg = viterbi_segment("ab", model)
        self.assertEqual([model.piece(i) for i in seg.ids], ["ab"])
        self.assertAlmostEqual(seg.log_prob, math.log(0.2))

    def test_empty_text(self):
        model = toy_model({"a": 0.5, "b": 0.5})
        seg = viterbi_segment("", model)
        self.assertEqual(seg.ids, ())
        self.assertEqual(seg.log_prob, 0.0)

    def test_single_character_vocab(self):
        model = toy_model({"a": 0.4, "b": 0.3, "c": 0.3})
        seg = viterbi_segment("abcab", model)
        self.assertEqual([model.piece(i) for i in seg.ids], list("abcab"))

    def test_matches_brute_force(self):
        probs = {"a": 0.2, "b": 0.15, "c": 0.1, "ab": 0.15, "bc": 0.1, "abc": 0.05, "ca": 0.25}
        model = toy_model(probs)
        for length in range(1, 7):
            for chars in itertools.product("abc", repeat=length):
                text = "".join(chars)
                best = max(sum(math.log(probs[p]) for p in seg) for seg in all_segmentations(text, set(probs)))
                self.assertAlmostEqual(viterbi_segment(text, model).log_prob, best, places=9, msg=text)

    def test_matches_brute_force_with_ties(self):
        # dyadic log probs add exactly, so equal-score segmentations really tie
        rng = random.Random(11)
        for trial in range(8):
            scores = {ch: -rng.choice([1.0, 1.5, 2.0]) for ch in "abcd"}
            while len(scores) < 25:
                piece = "".join(rng.choice("abcd") for _ in range(rng.randint(2, 4)))
                scores.setdefault(piece, -rng.choice([1.0, 1.5, 2.0, 2.5, 3.0]))
            model = assemble(list(scores.items()), "subword-unigram", 1.0)
            for _ in range(60):
                text = "".join(rng.choice("abcd") for _ in range(rng.randint(1, 10)))
                expected = min(all_segmentations(text, set(scores)),
                               key=lambda seg: (-sum(scores[p] for p in seg), len(seg), seg))
                seg = viterbi_segment(text, model)
                self.assertEqual(tuple(model.piece(i) for i in seg.ids), expected, msg=f"{trial}:{text}")
                self.assertEqual(seg.log_prob, sum(scores[p] for p in expected))

    def test_exact_tie_takes_fewest_pieces(self):
        model = toy_model({"a": 0.5, "b": 0.5, "ab": 0.25})
        seg = viterbi_segment("ab", model)
        self.assertEqual([model.piece(i) for i in seg.ids], ["ab"])
        self.assertEqual(seg.log_prob, math.log(0.25))

    def test_uncovered_chars_become_unk(self):
        model = toy_model({"a": 0.5, "b": 0.5})
        seg = viterbi_segment("azb", model)
        self.assertEqual(seg.ids[1], model.unk_id)
        self.assertEqual(decode(seg.ids, model), "a⁇b")

    def test_word_model_rejected(self):
        with self.assertRaises(ContractError):
            viterbi_segment("x", build_word_model(["x"]))


class TestUnigramTraining(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.trainer = UnigramTrainer(target_vocab=40)
        cls.model = cls.trainer.train(CORPUS)

    def test_vocab_size_and_specials(self):
        self.assertEqual(self.model.vocab_size, 40 + len(SPECIAL_PIECES))
        self.assertEqual([self.model.piece(i) for i in range(4)], list(SPECIAL_PIECES))

    def test_probabilities_normalized(self):
        lp = self.model.log_probs[4:]
        self.assertTrue(np.all(lp <= 0))
        self.assertAlmostEqual(float(np.exp(lp).sum()), 1.0, delta=1e-6)

    def test_em_loglik_non_decreasing_within_round(self):
        by_round: dict[int, list[float]] = {}
        for entry in self.trainer.trace:
            by_round.setdefault(entry.round, []).append(entry.log_likelihood)
        for values in by_round.values():
            for before, after in zip(values, values[1:]):
                self.assertGreaterEqual(after, before - 1e-6 * abs(before))

    def test_full_coverage_has_no_unk(self):
        for line in CORPUS:
            self.assertNotIn(self.model.unk_id, encode(line, self.model))

    def test_round_trip(self):
        for line in CORPUS:
            self.assertEqual(decode(encode(line, self.model), self.model), line)
        self.assertEqual(decode([], self.model), "")

    def test_round_trip_random_covered_strings(self):
        alphabet = sorted({ch for line in CORPUS for ch in line.replace(" ", "")})
        for _ in range(1000):
            words = ["".join(random.choice(alphabet) for _ in range(random.randint(1, 6)))
                     for _ in range(random.randint(1, 4))]
            text = " ".join(words)
            self.assertEqual(decode(viterbi_segment(text, self.model).ids, self.model), text)

    def test_repeated_pair_beats_character_path(self):
        model = train_unigram(["abab"] * 30, target_vocab=6)
        seg = viterbi_segment("abab", model)
        scores = {p: model.pieces[i][1] for p, i in model.piece_to_id.items()}
        self.assertGreater(seg.log_prob, 2 * (scores["a"] + scores["b"]))
        self.assertLess(len(seg.ids), 4)

    def test_partial_coverage_bounds_unk_fraction(self):
        corpus = ["aaaa bbb aab", "abab ba", "ab x", "ba qz"] * 5
        coverage = 0.9
        model = train_unigram(corpus, target_vocab=8, char_coverage=coverage)
        chars = unk = 0
        for line in corpus:
            chars += sum(len(w) for w in pre_split(line))
            unk += encode(line, model).count(model.unk_id)
        self.assertGreater(unk, 0)
        self.assertLessEqual(unk / chars, (1 - coverage) + 1e-6)

    def test_target_below_character_floor(self):
        with self.assertRaises(ConfigError):
            train_unigram(CORPUS, target_vocab=3)

    def test_whitespace_is_marked(self):
        ids = encode("the cat", self.model)
        pieces = "".join(self.model.piece(i) for i in ids)
        self.assertEqual(pieces, f"the{META}cat")

    def test_bos_eos(self):
        ids = encode("the cat", self.model, add_bos=True, add_eos=True)
        self.assertEqual(ids[0], self.model.bos_id)
        self.assertEqual(ids[-1], self.model.eos_id)


class TestWordTokenizer(unittest.TestCase):
    def test_punctuation_split(self):
        self.assertEqual(word_tokenize("Hello, world!"), ["Hello", ",", "world", "!"])
        self.assertEqual(word_tokenize(""), [])

    def test_frequency_truncation(self):
        model = build_word_model(["a a a a a b b b b c c c d d e"], max_size=3)
        ids = encode("a b c d d e", model)
        unk = [tok for tok, i in zip("a b c d d e".split(), ids) if i == model.unk_id]
        self.assertEqual(sorted(set(unk)), ["d", "e"])
        self.assertEqual(model.kind, "word")

    def test_decode_joins_with_spaces(self):
        model = build_word_model(["one two three"])
        self.assertEqual(decode(encode("one two three", model), model), "one two three")


class TestSegmentCache(unittest.TestCase):
    def test_scores_built_once_per_model(self):
        model = toy_model({"a": 0.5, "b": 0.3, "ab": 0.2})
        viterbi_segment("ab", model)
        scores = model.piece_scores
        viterbi_segment("ba abba bab", model)
        self.assertIs(model.piece_scores, scores)
        self.assertEqual(scores, {"a": math.log(0.5), "b": math.log(0.3), "ab": math.log(0.2)})

    def test_word_cache_is_bounded(self):
        self.assertEqual(_segment_word.cache_info().maxsize, SEGMENT_CACHE_WORDS)
        model = toy_model({"a": 0.5, "b": 0.5})
        viterbi_segment("abba", model)
        hits = _segment_word.cache_info().hits
        viterbi_segment("abba", model)
        self.assertEqual(_segment_word.cache_info().hits, hits + 1)
        self.assertLessEqual(_segment_word.cache_info().currsize, SEGMENT_CACHE_WORDS)


class TestModelFile(unittest.TestCase):
    def test_save_load(self):
        model = toy_model({"a": 0.5, "b": 0.3, "ab": 0.2})
        with tempfile.TemporaryDirectory() as tmp:
            path = save_model(os.path.join(tmp, "tok.model"), model)
            loaded = load_model(path)
        self.assertEqual(loaded.pieces, model.pieces)
        self.assertEqual(model_hash(loaded), model_hash(model))
        npt.assert_array_equal(loaded.log_probs, model.log_probs)

    def test_bad_line_reports_number(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "tok.model")
            with open(path, "w", encoding="utf-8") as f:
                f.write("#kind=subword-unigram\n#coverage=1.0\n#unk=0\n#bos=1\n#eos=2\n#pad=3\nno-tab-here\n")
            with self.assertRaises(IngestionError) as ctx:
                load_model(path)
        self.assertEqual(ctx.exception.line, 7)


if __name__ == "__main__":
    unittest.main()
