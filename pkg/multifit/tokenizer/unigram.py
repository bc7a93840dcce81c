"""Unigram-LM subword tokenizer: EM training over a piece lattice, likelihood
based pruning, and Viterbi decoding."""
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

from multifit.exception import ConfigError, ContractError, DataError
from multifit.logger import GLOBAL_LOGGER as log
from multifit.tokenizer.model import (
    META,
    SPECIAL_PIECES,
    UNK_SURFACE,
    Segmentation,
    TokenizerModel,
    assemble,
    pre_split,
)

_TINY = 1e-30
# distinct (word, model) pairs memoized by viterbi_segment
SEGMENT_CACHE_WORDS = 1 << 16


def _logaddexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def _better(cand: tuple, best: tuple | None) -> bool:
    # max log prob, then fewest pieces, then lexicographically smallest pieces
    if best is None:
        return True
    if cand[0] != best[0]:
        return cand[0] > best[0]
    if cand[1] != best[1]:
        return cand[1] < best[1]
    return cand[2] < best[2]


def best_path(text: str, scores: dict[str, float], max_len: int, exclude: str | None = None) -> tuple[float, tuple[str, ...]] | None:
    """Maximum-likelihood split of ``text`` into pieces of ``scores``.

    ``exclude`` removes one piece from consideration (used to find the
    alternative segmentation of a piece while pruning). Returns None when no
    complete path exists.
    """
    n = len(text)
    best: list[tuple | None] = [None] * (n + 1)
    best[0] = (0.0, 0, ())
    for end in range(1, n + 1):
        for start in range(max(0, end - max_len), end):
            prev = best[start]
            if prev is None:
                continue
            piece = text[start:end]
            if piece == exclude:
                continue
            lp = scores.get(piece)
            if lp is None:
                continue
            cand = (prev[0] + lp, prev[1] + 1, prev[2] + (piece,))
            if _better(cand, best[end]):
                best[end] = cand
    if best[n] is None:
        return None
    return best[n][0], best[n][2]


@dataclass
class EMTraceEntry:
    round: int
    iteration: int
    vocab_size: int
    log_likelihood: float


@dataclass
class UnigramTrainer:
    """Trains a unigram tokenizer; keeps the EM log-likelihood trace.

    ``target_vocab`` counts regular pieces; the four specials come on top.
    """

    target_vocab: int
    char_coverage: float = 1.0
    seed_multiplier: int = 4
    max_piece_length: int = 16
    em_iterations: int = 2
    prune_fraction: float = 0.2
    trace: list[EMTraceEntry] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.char_coverage <= 1.0:
            raise ConfigError(f"char_coverage must be in (0, 1], got {self.char_coverage}")
        if self.seed_multiplier < 1 or self.max_piece_length < 1 or self.em_iterations < 1:
            raise ConfigError("seed_multiplier, max_piece_length and em_iterations must be >= 1")
        if not 0.0 < self.prune_fraction < 1.0:
            raise ConfigError(f"prune_fraction must be in (0, 1), got {self.prune_fraction}")

    # ---------- corpus statistics ----------
    def _covered_chars(self, char_counts: Counter) -> set[str]:
        total = sum(char_counts.values())
        covered: set[str] = set()
        running = 0
        for ch, count in sorted(char_counts.items(), key=lambda kv: (-kv[1], kv[0])):
            if running >= self.char_coverage * total:
                break
            covered.add(ch)
            running += count
        if META in char_counts:
            covered.add(META)
        return covered

    @staticmethod
    def _covered_runs(word: str, covered: set[str]) -> list[str]:
        runs, current = [], []
        for ch in word:
            if ch in covered:
                current.append(ch)
            elif current:
                runs.append("".join(current))
                current = []
        if current:
            runs.append("".join(current))
        return runs

    def _seed_pieces(self, segments: Counter, covered: set[str]) -> dict[str, float]:
        sub_counts: Counter = Counter()
        char_counts: Counter = Counter()
        for seg, count in segments.items():
            for i in range(len(seg)):
                char_counts[seg[i]] += count
                for j in range(i + 2, min(len(seg), i + self.max_piece_length) + 1):
                    sub_counts[seg[i:j]] += count
        for special in SPECIAL_PIECES:
            sub_counts.pop(special, None)
        budget = max(0, self.seed_multiplier * self.target_vocab - len(covered))
        ranked = sorted(sub_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:budget]
        if len(covered) + len(ranked) < self.target_vocab:
            raise ConfigError(
                f"corpus supplies only {len(covered) + len(ranked)} candidate pieces, "
                f"below target_vocab {self.target_vocab}"
            )
        freqs = {ch: float(char_counts[ch]) for ch in covered if char_counts[ch] > 0}
        # covered chars that only occur outside training runs still get a piece
        for ch in covered:
            freqs.setdefault(ch, 1.0)
        freqs.update({p: float(c) for p, c in ranked})
        total = sum(freqs.values())
        return {p: math.log(c / total) for p, c in freqs.items()}

    # ---------- EM ----------
    def _expected_counts(self, segments: Counter, scores: dict[str, float]) -> tuple[dict[str, float], float]:
        counts = dict.fromkeys(scores, 0.0)
        loglik = 0.0
        max_len = min(self.max_piece_length, max(len(p) for p in scores))
        for seg, freq in segments.items():
            n = len(seg)
            edges = []
            for start in range(n):
                for end in range(start + 1, min(n, start + max_len) + 1):
                    piece = seg[start:end]
                    lp = scores.get(piece)
                    if lp is not None:
                        edges.append((start, end, piece, lp))
            alpha = [-math.inf] * (n + 1)
            alpha[0] = 0.0
            for start, end, _, lp in edges:  # edges are sorted by start
                alpha[end] = _logaddexp(alpha[end], alpha[start] + lp)
            beta = [-math.inf] * (n + 1)
            beta[n] = 0.0
            for start, end, _, lp in reversed(edges):
                beta[start] = _logaddexp(beta[start], lp + beta[end])
            z = alpha[n]
            loglik += freq * z
            for start, end, piece, lp in edges:
                counts[piece] += freq * math.exp(alpha[start] + lp + beta[end] - z)
        return counts, loglik

    @staticmethod
    def _normalize(counts: dict[str, float]) -> dict[str, float]:
        floored = {p: max(c, _TINY) for p, c in counts.items()}
        total = sum(floored.values())
        return {p: math.log(c / total) for p, c in floored.items()}

    def _run_em(self, segments: Counter, scores: dict[str, float], round_no: int) -> dict[str, float]:
        for it in range(self.em_iterations):
            counts, loglik = self._expected_counts(segments, scores)
            self.trace.append(EMTraceEntry(round_no, it, len(scores), loglik))
            log.info("EM iteration", round=round_no, iteration=it, vocab=len(scores), loglik=loglik)
            scores = self._normalize(counts)
        return scores

    # ---------- pruning ----------
    def _prune(self, segments: Counter, scores: dict[str, float], covered: set[str]) -> dict[str, float]:
        max_len = max(len(p) for p in scores)
        freq: Counter = Counter()
        for seg, count in segments.items():
            path = best_path(seg, scores, max_len)
            for piece in path[1]:
                freq[piece] += count
        total = float(sum(freq.values()))
        prunable = [p for p in scores if not (len(p) == 1 and p in covered)]

        losses = {}
        for piece in prunable:
            f = freq.get(piece, 0)
            if f == 0:
                losses[piece] = 0.0
                continue
            alt = best_path(piece, scores, max_len, exclude=piece)
            if alt is None:
                losses[piece] = math.inf
                continue
            alt_pieces = alt[1]
            new_total = total + f * (len(alt_pieces) - 1)
            lp_piece = math.log(f) - math.log(total)
            lp_alt = sum(math.log(freq.get(a, 0) + f) for a in alt_pieces) - len(alt_pieces) * math.log(new_total)
            losses[piece] = f * (lp_piece - lp_alt)

        excess = len(scores) - self.target_vocab
        n_remove = min(excess, max(1, math.ceil(self.prune_fraction * len(prunable))))
        ranked = sorted(prunable, key=lambda p: (losses[p], scores[p], p))
        removed = set(ranked[:n_remove])
        log.info("Pruned pieces", removed=len(removed), remaining=len(scores) - len(removed))
        kept = {p: lp for p, lp in scores.items() if p not in removed}
        total_p = sum(math.exp(lp) for lp in kept.values())
        return {p: lp - math.log(total_p) for p, lp in kept.items()}

    def train(self, corpus: Iterable[str]) -> TokenizerModel:
        words: Counter = Counter()
        for line in corpus:
            words.update(pre_split(line))
        char_counts: Counter = Counter()
        for word, count in words.items():
            for ch in word:
                char_counts[ch] += count
        if not char_counts:
            raise DataError("cannot train a tokenizer on an empty corpus")

        covered = self._covered_chars(char_counts)
        if self.target_vocab < len(covered):
            raise ConfigError(
                f"target_vocab {self.target_vocab} is below the character floor {len(covered)}"
            )

        segments: Counter = Counter()
        for word, count in words.items():
            for run in self._covered_runs(word, covered):
                segments[run] += count

        scores = self._seed_pieces(segments, covered)
        log.info("Seed vocabulary built", seeds=len(scores), covered_chars=len(covered), words=len(words))

        round_no = 0
        while True:
            scores = self._run_em(segments, scores, round_no)
            if len(scores) <= self.target_vocab:
                break
            scores = self._prune(segments, scores, covered)
            round_no += 1

        model = assemble(list(scores.items()), "subword-unigram", self.char_coverage)
        log.info("Unigram tokenizer trained", vocab=model.vocab_size, rounds=round_no + 1)
        return model


def train_unigram(
    corpus: Iterable[str],
    target_vocab: int,
    char_coverage: float = 1.0,
    seed_multiplier: int = 4,
    **kwargs,
) -> TokenizerModel:
    trainer = UnigramTrainer(target_vocab, char_coverage=char_coverage, seed_multiplier=seed_multiplier, **kwargs)
    return trainer.train(corpus)


# ---------- applying a model ----------
@lru_cache(maxsize=SEGMENT_CACHE_WORDS)
def _segment_word(word: str, model: TokenizerModel) -> tuple[tuple[int, ...], float]:
    scores = model.piece_scores
    covered = model.covered_chars
    unk_lp = model.pieces[model.unk_id][1]
    ids: list[int] = []
    total = 0.0
    run: list[str] = []

    def flush():
        nonlocal total
        if not run:
            return
        path = best_path("".join(run), scores, model.max_piece_length)
        for piece in path[1]:
            ids.append(model.piece_to_id[piece])
            total += scores[piece]
        run.clear()

    for ch in word:
        if ch in covered:
            run.append(ch)
        else:
            flush()
            ids.append(model.unk_id)
            total += unk_lp
    flush()
    return tuple(ids), total


def viterbi_segment(text: str, model: TokenizerModel) -> Segmentation:
    """Deterministic maximum-likelihood segmentation of ``text``.

    Characters outside the model's coverage become one UNK id each. Ties are
    broken by fewest pieces, then the lexicographically smallest piece sequence.
    """
    if model.kind != "subword-unigram":
        raise ContractError(f"viterbi_segment needs a subword-unigram model, got {model.kind}")
    ids: list[int] = []
    total = 0.0
    for word in pre_split(text):
        word_ids, word_lp = _segment_word(word, model)
        ids.extend(word_ids)
        total += word_lp
    return Segmentation(tuple(ids), total)


def decode(ids: Iterable[int], model: TokenizerModel) -> str:
    out = []
    for idx in ids:
        piece = model.piece(idx)
        if idx == model.unk_id:
            piece = UNK_SURFACE
        elif idx in model.special_ids:
            continue
        out.append(piece)
    if model.kind == "word":
        return " ".join(out)
    return "".join(out).replace(META, " ")
