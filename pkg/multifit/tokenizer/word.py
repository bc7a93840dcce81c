"""Rule-based word tokenizer used as the word-level baseline: whitespace split,
punctuation detached from token edges, vocabulary truncated by frequency."""
import math
import unicodedata
from collections import Counter
from typing import Iterable

from multifit.exception import ConfigError
from multifit.logger import GLOBAL_LOGGER as log
from multifit.tokenizer.model import TokenizerModel, assemble, normalize


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def word_tokenize(text: str) -> list[str]:
    tokens: list[str] = []
    for chunk in normalize(text).split():
        start, end = 0, len(chunk)
        while start < end and _is_punct(chunk[start]):
            start += 1
        while end > start and _is_punct(chunk[end - 1]):
            end -= 1
        tokens.extend(chunk[:start])
        if start < end:
            tokens.append(chunk[start:end])
        tokens.extend(chunk[end:])
    return tokens


def build_word_model(corpus: Iterable[str], max_size: int = 60_000) -> TokenizerModel:
    """Keep the ``max_size`` most frequent tokens; everything else encodes to UNK."""
    if max_size < 1:
        raise ConfigError(f"word vocabulary size must be >= 1, got {max_size}")
    counts: Counter = Counter()
    for line in corpus:
        counts.update(word_tokenize(line))
    kept = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    total = sum(c for _, c in kept)
    scored = [(w, math.log(c / total)) for w, c in kept]
    log.info("Word vocabulary built", distinct=len(counts), kept=len(kept))
    return assemble(scored, "word", 1.0)
