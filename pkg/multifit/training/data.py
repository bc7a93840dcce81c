"""Corpus and labeled-data ingestion plus the two batching schemes: contiguous
BPTT windows for language models and padded batches for classification."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from multifit.exception import DataError, IngestionError
from multifit.logger import GLOBAL_LOGGER as log
from multifit.tokenizer import TokenizerModel, encode
from multifit.tokenizer.model import normalize
from multifit.utils.text_io import read_utf8


# ---------- language-model streams ----------
@dataclass
class BpttWindows:
    """Non-overlapping (input, target) windows over ``batch`` contiguous strips."""

    strips: np.ndarray  # [strip_len, batch]
    bptt: int
    dropped: int

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        usable = self.strips.shape[0] - 1
        for start in range(0, usable, self.bptt):
            seq = min(self.bptt, usable - start)
            yield self.strips[start:start + seq], self.strips[start + 1:start + 1 + seq]

    def __len__(self) -> int:
        usable = self.strips.shape[0] - 1
        return -(-usable // self.bptt)

    @property
    def n_targets(self) -> int:
        return (self.strips.shape[0] - 1) * self.strips.shape[1]


def bptt_batchify(stream: Sequence[int] | np.ndarray, batch: int, bptt: int) -> BpttWindows:
    """Split ``stream`` into ``batch`` strips and window them ``bptt`` steps at a time.

    The remainder that does not fill a whole strip row is dropped and reported.
    """
    tokens = np.asarray(stream, dtype=np.int64)
    if batch < 1 or bptt < 1:
        raise DataError(f"batch and bptt must be >= 1, got {batch} and {bptt}")
    if tokens.size < 2 * batch:
        raise DataError(f"token stream of length {tokens.size} is too short for batch {batch}")
    strip_len = tokens.size // batch
    dropped = int(tokens.size - strip_len * batch)
    if dropped:
        log.info("Dropped stream remainder", dropped=dropped, batch=batch)
    strips = tokens[: strip_len * batch].reshape(batch, strip_len).T
    return BpttWindows(np.ascontiguousarray(strips), bptt, dropped)


def read_corpus(path: str | Path) -> list[str]:
    """Plain UTF-8 text, one document per line; blank lines are skipped."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"corpus file not found: {path}")
    lines = [normalize(line).strip() for line in read_utf8(path).splitlines()]
    lines = [line for line in lines if line]
    log.info("Corpus loaded", path=str(path), lines=len(lines))
    return lines


def split_validation(lines: Sequence, fraction: float) -> tuple[list, list]:
    """Hold out the final ``fraction`` of lines (at least one when there are two or more)."""
    lines = list(lines)
    if fraction <= 0 or len(lines) < 2:
        return lines, []
    n_valid = min(max(1, int(round(len(lines) * fraction))), len(lines) - 1)
    return lines[:-n_valid], lines[-n_valid:]


def encode_stream(lines: Iterable[str], tokenizer: TokenizerModel) -> np.ndarray:
    """Concatenate the encodings of all lines, each terminated by EOS."""
    ids: list[int] = []
    for line in lines:
        ids.extend(encode(line, tokenizer, add_eos=True))
    return np.asarray(ids, dtype=np.int64)


# ---------- labeled data ----------
@dataclass(frozen=True)
class Example:
    text: str
    label: int
    id: str


@dataclass
class LabeledDataset:
    examples: list[Example]
    class_names: list[str]
    split: str = "train"

    def __post_init__(self):
        k = len(self.class_names)
        for i, ex in enumerate(self.examples):
            if not 0 <= ex.label < k:
                raise DataError(f"class id {ex.label} of example {ex.id!r} outside [0, {k})")
            if not ex.text.strip():
                raise DataError(f"example {ex.id!r} (position {i}) has empty text")

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([ex.label for ex in self.examples], dtype=np.int64)

    def with_labels(self, labels: Sequence[int], split: str | None = None) -> "LabeledDataset":
        if len(labels) != len(self.examples):
            raise DataError(f"{len(labels)} labels for {len(self.examples)} examples")
        examples = [Example(ex.text, int(lbl), ex.id) for ex, lbl in zip(self.examples, labels)]
        return LabeledDataset(examples, list(self.class_names), split or self.split)

    def subset(self, indices: Iterable[int], split: str | None = None) -> "LabeledDataset":
        return LabeledDataset([self.examples[i] for i in indices], list(self.class_names), split or self.split)


def _class_index(raw_labels: list[str], class_names: Sequence[str] | None) -> list[str]:
    if class_names:
        return list(class_names)
    if all(lbl.isdigit() for lbl in raw_labels):
        return [str(i) for i in range(max(int(lbl) for lbl in raw_labels) + 1)]
    return sorted(set(raw_labels))


def read_labeled_tsv(path: str | Path, class_names: Sequence[str] | None = None, split: str = "train") -> LabeledDataset:
    """``<class>\\t<text>`` or ``<id>\\t<class>\\t<text>`` per line.

    Classes are either names or dense integer ids. Without ``class_names``,
    integer labels index classes directly and names are sorted otherwise.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"labeled file not found: {path}")
    rows: list[tuple[int, str, str, str]] = []
    for lineno, line in enumerate(read_utf8(path).splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) == 2:
            ex_id, label, text = f"{split}-{lineno}", parts[0], parts[1]
        elif len(parts) >= 3:
            ex_id, label, text = parts[0], parts[1], "\t".join(parts[2:])
        else:
            raise IngestionError("expected '<class>\\t<text>' or '<id>\\t<class>\\t<text>'", line=lineno)
        text = normalize(text).strip()
        if not text:
            raise IngestionError("empty text", line=lineno)
        rows.append((lineno, ex_id, label.strip(), text))
    if not rows:
        raise DataError(f"no examples in {path}")

    names = _class_index([r[2] for r in rows], class_names)
    index = {name: i for i, name in enumerate(names)}
    seen: set[str] = set()
    examples = []
    for lineno, ex_id, label, text in rows:
        if ex_id in seen:
            raise IngestionError(f"duplicate example id {ex_id!r}", line=lineno)
        seen.add(ex_id)
        if label in index:
            cls = index[label]
        elif label.isdigit() and int(label) < len(names):
            cls = int(label)
        else:
            raise IngestionError(f"unknown class {label!r}", line=lineno)
        examples.append(Example(text, cls, ex_id))
    log.info("Labeled data loaded", path=str(path), examples=len(examples), classes=len(names))
    return LabeledDataset(examples, names, split)


def read_unlabeled_tsv(path: str | Path) -> dict[str, str]:
    """``<id>\\t<text>`` per line; ids must be unique."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"unlabeled file not found: {path}")
    texts: dict[str, str] = {}
    for lineno, line in enumerate(read_utf8(path).splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        ex_id, sep, text = line.partition("\t")
        if not sep or not text.strip():
            raise IngestionError("expected '<id>\\t<text>'", line=lineno)
        if ex_id in texts:
            raise IngestionError(f"duplicate example id {ex_id!r}", line=lineno)
        texts[ex_id] = normalize(text).strip()
    log.info("Unlabeled texts loaded", path=str(path), texts=len(texts))
    return texts


# ---------- classification batches ----------
@dataclass
class PaddedBatch:
    ids: np.ndarray  # [T, B], PAD beyond each length
    lengths: np.ndarray  # [B]
    labels: np.ndarray  # [B]
    example_ids: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.lengths.shape[0])


def encode_examples(dataset: LabeledDataset, tokenizer: TokenizerModel) -> list[list[int]]:
    # BOS first so that no example is ever empty
    return [encode(ex.text, tokenizer, add_bos=True) for ex in dataset.examples]


def pad_batches(
    dataset: LabeledDataset,
    tokenizer: TokenizerModel,
    batch: int,
    order: Sequence[int] | None = None,
    min_batch: int = 1,
    encoded: list[list[int]] | None = None,
) -> list[PaddedBatch]:
    """Group examples (in ``order``, default file order) into padded batches.

    Each batch is padded to its longest member. A trailing batch smaller than
    ``min_batch`` is merged into the one before it.
    """
    if batch < 1:
        raise DataError(f"batch must be >= 1, got {batch}")
    encoded = encoded if encoded is not None else encode_examples(dataset, tokenizer)
    order = list(range(len(dataset))) if order is None else list(order)
    groups = [order[i:i + batch] for i in range(0, len(order), batch)]
    if len(groups) > 1 and len(groups[-1]) < min_batch:
        groups[-2].extend(groups.pop())

    batches = []
    for group in groups:
        lengths = np.asarray([len(encoded[i]) for i in group], dtype=np.int64)
        ids = np.full((int(lengths.max()), len(group)), tokenizer.pad_id, dtype=np.int64)
        for col, i in enumerate(group):
            ids[: lengths[col], col] = encoded[i]
        labels = np.asarray([dataset.examples[i].label for i in group], dtype=np.int64)
        batches.append(PaddedBatch(ids, lengths, labels, [dataset.examples[i].id for i in group]))
    return batches
