"""Self-describing binary checkpoints.

Layout (little-endian)::

    b"MFIT" | u32 version | u64 config length | config text (UTF-8)
    u32 tensor count
    per tensor: u16 name length | name | u8 rank | u32 dims... | float32 data
    u64 checksum (blake2b-8 of every preceding byte)

The config text is the echoed run configuration plus ``model.*`` keys and
``meta.*`` keys (kind, tokenizer hash, ties, buffers, class names and the
optimizer scalars). Tied tensors are written once and re-tied on load.
"""
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from multifit.exception import (
    BadMagicError,
    CheckpointError,
    ChecksumError,
    UnsupportedVersionError,
)
from multifit.logger import GLOBAL_LOGGER as log
from multifit.network.config import ModelConfig
from multifit.network.parameters import Parameters
from multifit.numerics import OptimizerState
from multifit.utils.config_loader import (
    build_model_config,
    format_value,
    load_defaults,
    model_settings,
    parse_settings_text,
    parse_value,
)

MAGIC = b"MFIT"
FORMAT_VERSION = 1
CHECKSUM_BYTES = 8
_OPT_AVG = "optim.exp_avg."
_OPT_SQ = "optim.exp_avg_sq."

CheckpointKind = Literal["lm", "classifier"]


@dataclass
class Checkpoint:
    kind: CheckpointKind
    model_config: ModelConfig
    params: Parameters
    tokenizer_hash: str = ""
    class_names: list[str] = field(default_factory=list)
    settings: dict[str, str] = field(default_factory=dict)
    optimizer: OptimizerState | None = None
    version: int = FORMAT_VERSION

    def config_text(self) -> str:
        lines = {k: v for k, v in self.settings.items() if not k.startswith(("model.", "meta."))}
        lines.update({k: format_value(v) for k, v in model_settings(self.model_config).items()})
        meta = {
            "meta.kind": self.kind,
            "meta.tokenizer_hash": self.tokenizer_hash,
            "meta.class_names": json.dumps(self.class_names, ensure_ascii=False),
            "meta.ties": json.dumps(self.params.ties, sort_keys=True),
            "meta.buffers": json.dumps(sorted(self.params.buffers)),
        }
        if self.optimizer is not None:
            meta.update({
                "meta.optimizer.step": str(self.optimizer.step),
                "meta.optimizer.beta2": repr(self.optimizer.beta2),
                "meta.optimizer.eps": repr(self.optimizer.eps),
                "meta.optimizer.weight_decay": repr(self.optimizer.weight_decay),
            })
        lines.update(meta)
        return "".join(f"{k} = {v}\n" for k, v in sorted(lines.items()))


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=CHECKSUM_BYTES).digest()


def _tensor_entries(cp: Checkpoint) -> list[tuple[str, np.ndarray]]:
    entries = [(name, t.data) for name, t in cp.params.stored().items()]
    if cp.optimizer is not None:
        for name in sorted(cp.optimizer.exp_avg):
            entries.append((_OPT_AVG + name, cp.optimizer.exp_avg[name]))
            entries.append((_OPT_SQ + name, cp.optimizer.exp_avg_sq[name]))
    return entries


def save_checkpoint(path: str | Path, cp: Checkpoint) -> Path:
    path = Path(path)
    text = cp.config_text().encode("utf-8")
    entries = _tensor_entries(cp)

    parts = [MAGIC, struct.pack("<I", cp.version), struct.pack("<Q", len(text)), text, struct.pack("<I", len(entries))]
    for name, data in entries:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(data, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    payload = b"".join(parts)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload + _checksum(payload))
    except OSError as e:
        log.error("Checkpoint not writable", path=str(path), error=str(e))
        raise CheckpointError(f"cannot write checkpoint {path}: {e.strerror or e}", error_details=e) from e
    log.info("Checkpoint saved", path=str(path), kind=cp.kind, tensors=len(entries), bytes=len(payload) + CHECKSUM_BYTES)
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint payload ends early at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror or e}", error_details=e) from e
    if not MAGIC.startswith(blob[:len(MAGIC)]):
        raise BadMagicError(f"{path} is not a checkpoint (bad magic {blob[:4]!r})")
    if len(blob) < len(MAGIC) + 4 + CHECKSUM_BYTES:
        raise ChecksumError(f"{path} is truncated ({len(blob)} bytes)")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path} has format version {version}, expected {FORMAT_VERSION}")
    payload, stored = blob[:-CHECKSUM_BYTES], blob[-CHECKSUM_BYTES:]
    if _checksum(payload) != stored:
        log.error("Checkpoint checksum mismatch", path=str(path))
        raise ChecksumError(f"{path} failed checksum verification (truncated or corrupted)")

    reader = _Reader(payload)
    reader.take(8)
    (text_len,) = reader.unpack("<Q")
    text = reader.take(text_len).decode("utf-8")
    (count,) = reader.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        dims = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    if reader.pos != len(payload):
        raise CheckpointError(f"{path} has {len(payload) - reader.pos} trailing bytes")

    cp = _assemble(text, tensors, str(path))
    log.info("Checkpoint loaded", path=str(path), kind=cp.kind, tensors=count)
    return cp


def _assemble(text: str, tensors: dict[str, np.ndarray], source: str) -> Checkpoint:
    raw = {key: value for _, key, value in parse_settings_text(text, source)}
    defaults = load_defaults()
    model_values = {
        k: parse_value(k, v, defaults[k], source) for k, v in raw.items() if k.startswith("model.") and k in defaults
    }
    try:
        kind = raw["meta.kind"]
        ties = json.loads(raw["meta.ties"])
        buffers = set(json.loads(raw["meta.buffers"]))
        class_names = json.loads(raw["meta.class_names"])
    except (KeyError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: malformed checkpoint metadata ({e})")

    params = Parameters()
    for name, data in tensors.items():
        if not name.startswith("optim."):
            params.add(name, data, buffer=name in buffers, dtype=np.float32)
    for alias, target in ties.items():
        params.tie(alias, target)

    optimizer = None
    if "meta.optimizer.step" in raw:
        optimizer = OptimizerState(
            exp_avg={n[len(_OPT_AVG):]: t for n, t in tensors.items() if n.startswith(_OPT_AVG)},
            exp_avg_sq={n[len(_OPT_SQ):]: t for n, t in tensors.items() if n.startswith(_OPT_SQ)},
            step=int(raw["meta.optimizer.step"]),
            beta2=float(raw["meta.optimizer.beta2"]),
            eps=float(raw["meta.optimizer.eps"]),
            weight_decay=float(raw["meta.optimizer.weight_decay"]),
        )
    return Checkpoint(
        kind=kind,
        model_config=build_model_config(model_values),
        params=params,
        tokenizer_hash=raw.get("meta.tokenizer_hash", ""),
        class_names=class_names,
        settings={k: v for k, v in raw.items() if not k.startswith(("model.", "meta."))},
        optimizer=optimizer,
    )
