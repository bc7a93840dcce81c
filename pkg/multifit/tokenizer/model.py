import hashlib
import math
import unicodedata
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Literal

import numpy as np

from multifit.exception import ContractError, IngestionError
from multifit.logger import GLOBAL_LOGGER as log
from multifit.utils.text_io import read_utf8, write_utf8

# Marks word-initial pieces of every word but the first one on a line
META = "▁"
UNK_SURFACE = "⁇"

TokenizerKind = Literal["subword-unigram", "word"]
SPECIAL_PIECES = ("<unk>", "<s>", "</s>", "<pad>")
UNK_ID, BOS_ID, EOS_ID, PAD_ID = range(4)
UNK_PENALTY = 10.0


def normalize(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def pre_split(text: str) -> list[str]:
    """NFC-normalize, split on whitespace and mark words after the first."""
    words = normalize(text).split()
    return [w if i == 0 else META + w for i, w in enumerate(words)]


@dataclass(frozen=True)
class Segmentation:
    ids: tuple[int, ...]
    log_prob: float


@dataclass(frozen=True, eq=False)
class TokenizerModel:
    """Piece inventory with log probabilities, in id order (specials first)."""

    pieces: tuple[tuple[str, float], ...]
    char_coverage: float = 1.0
    kind: TokenizerKind = "subword-unigram"
    unk_id: int = UNK_ID
    bos_id: int = BOS_ID
    eos_id: int = EOS_ID
    pad_id: int = PAD_ID

    def __post_init__(self):
        seen = set()
        for piece, lp in self.pieces:
            if not piece:
                raise ContractError("tokenizer pieces must be non-empty")
            if piece in seen:
                raise ContractError(f"duplicate tokenizer piece {piece!r}")
            if lp > 0 or math.isnan(lp):
                raise ContractError(f"piece {piece!r} has invalid log prob {lp}")
            seen.add(piece)
        for name in ("unk_id", "bos_id", "eos_id", "pad_id"):
            if not 0 <= getattr(self, name) < len(self.pieces):
                raise ContractError(f"{name} out of range for {len(self.pieces)} pieces")
        if not 0.0 < self.char_coverage <= 1.0:
            raise ContractError(f"char_coverage must be in (0, 1], got {self.char_coverage}")

    @property
    def vocab_size(self) -> int:
        return len(self.pieces)

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset((self.unk_id, self.bos_id, self.eos_id, self.pad_id))

    @cached_property
    def piece_to_id(self) -> dict[str, int]:
        specials = self.special_ids
        return {p: i for i, (p, _) in enumerate(self.pieces) if i not in specials}

    @cached_property
    def log_probs(self) -> np.ndarray:
        return np.array([lp for _, lp in self.pieces], dtype=np.float64)

    @cached_property
    def piece_scores(self) -> dict[str, float]:
        return {p: self.pieces[i][1] for p, i in self.piece_to_id.items()}

    @cached_property
    def covered_chars(self) -> frozenset[str]:
        return frozenset(p for p in self.piece_to_id if len(p) == 1)

    @cached_property
    def max_piece_length(self) -> int:
        return max((len(p) for p in self.piece_to_id), default=1)

    def piece(self, idx: int) -> str:
        if not 0 <= idx < len(self.pieces):
            raise ContractError(f"piece id {idx} out of range [0, {len(self.pieces)})")
        return self.pieces[idx][0]

    def to_text(self) -> str:
        lines = [
            f"#kind={self.kind}",
            f"#coverage={self.char_coverage!r}",
            f"#unk={self.unk_id}",
            f"#bos={self.bos_id}",
            f"#eos={self.eos_id}",
            f"#pad={self.pad_id}",
        ]
        lines += [f"{p}\t{lp!r}" for p, lp in self.pieces]
        return "\n".join(lines) + "\n"


def assemble(scored: list[tuple[str, float]], kind: TokenizerKind, char_coverage: float) -> TokenizerModel:
    """Prefix the four specials to regular pieces ordered by descending log prob."""
    regular = sorted(scored, key=lambda item: (-item[1], item[0]))
    unk_lp = (min(lp for _, lp in regular) if regular else 0.0) - UNK_PENALTY
    specials = [(SPECIAL_PIECES[0], unk_lp)] + [(p, 0.0) for p in SPECIAL_PIECES[1:]]
    return TokenizerModel(tuple(specials + regular), char_coverage=char_coverage, kind=kind)


def model_hash(model: TokenizerModel) -> str:
    return hashlib.sha256(model.to_text().encode("utf-8")).hexdigest()


def save_model(path: str | Path, model: TokenizerModel) -> Path:
    path = write_utf8(path, model.to_text())
    log.info("Tokenizer model saved", path=str(path), kind=model.kind, vocab=model.vocab_size)
    return path


_HEADER_KEYS = {"kind", "coverage", "unk", "bos", "eos", "pad"}


def load_model(path: str | Path) -> TokenizerModel:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"tokenizer model not found: {path}")
    header: dict[str, str] = {}
    pieces: list[tuple[str, float]] = []
    # pieces may hold any character except newline, so no splitlines()
    lines = read_utf8(path).split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, line in enumerate(lines, 1):
        if not pieces and line.startswith("#") and "=" in line:
            key, value = line[1:].split("=", 1)
            if key not in _HEADER_KEYS:
                raise IngestionError(f"unknown tokenizer header '{key}'", line=lineno)
            header[key] = value
            continue
        if "\t" not in line:
            raise IngestionError("expected '<piece>\\t<log_prob>'", line=lineno)
        piece, _, lp = line.rpartition("\t")
        try:
            pieces.append((piece, float(lp)))
        except ValueError:
            raise IngestionError(f"unparsable log prob {lp!r}", line=lineno)
    missing = _HEADER_KEYS - header.keys()
    if missing:
        raise IngestionError(f"tokenizer model {path} lacks header(s): {sorted(missing)}")
    try:
        model = TokenizerModel(
            tuple(pieces),
            char_coverage=float(header["coverage"]),
            kind=header["kind"],  # type: ignore[arg-type]
            unk_id=int(header["unk"]),
            bos_id=int(header["bos"]),
            eos_id=int(header["eos"]),
            pad_id=int(header["pad"]),
        )
    except (ValueError, ContractError) as e:
        raise IngestionError(f"invalid tokenizer model {path}: {e}", error_details=e) from e
    log.info("Tokenizer model loaded", path=str(path), kind=model.kind, vocab=model.vocab_size)
    return model
