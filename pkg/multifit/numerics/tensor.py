"""Dense tensors and the recording tape used for reverse-mode differentiation.

Ops (see ``ops.py``) compute their forward value with numpy and, when a tape is
active in the current context, append a ``TapeRecord`` holding a closure that
maps the output gradient to input gradients. ``backward`` replays the records
in reverse order.
"""
import itertools
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from multifit.exception import ContractError, NumericError
from multifit.logger import GLOBAL_LOGGER as log

_ids = itertools.count(1)
_default_dtype: ContextVar[np.dtype] = ContextVar("multifit_dtype", default=np.dtype(np.float32))
_active_tape: ContextVar["Tape | None"] = ContextVar("multifit_tape", default=None)


def default_dtype() -> np.dtype:
    return _default_dtype.get()


@contextmanager
def precision(dtype) -> Iterator[np.dtype]:
    """Select the float width for tensors created inside the block.

    64-bit is meant for verification (gradient checks); training runs in 32-bit.
    """
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported precision {dtype}, use float32 or float64")
    token = _default_dtype.set(dtype)
    try:
        yield dtype
    finally:
        _default_dtype.reset(token)


class Tensor:
    """A row-major numpy array with an identity used to key gradients."""

    __slots__ = ("data", "requires_grad", "name", "uid")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.name = name
        self.uid = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name, dtype=self.data.dtype)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # operator sugar, implemented in ops
    def __add__(self, other):
        from multifit.numerics import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from multifit.numerics import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from multifit.numerics import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from multifit.numerics import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from multifit.numerics import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from multifit.numerics import ops
        return ops.mul(other, self)

    def __neg__(self):
        from multifit.numerics import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from multifit.numerics import ops
        return ops.matmul(self, other)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class TapeRecord:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


@dataclass
class Tape:
    """Ordered log of differentiable ops; one backward pass per recording."""

    records: list[TapeRecord] = field(default_factory=list)
    consumed: bool = False
    _token: object = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def produced(self, tensor: Tensor) -> bool:
        return any(r.output is tensor for r in self.records)


def active_tape() -> Tape | None:
    return _active_tape.get()


@contextmanager
def no_record() -> Iterator[None]:
    """Evaluate ops without recording, even inside an active tape."""
    token = _active_tape.set(None)
    try:
        yield
    finally:
        _active_tape.reset(token)


def check_finite(op: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        bad = int(np.size(value) - np.count_nonzero(np.isfinite(value)))
        log.error("Non-finite value produced", op=op, count=bad)
        raise NumericError(f"op '{op}' produced {bad} non-finite value(s)")


def record(op: str, inputs: Sequence[Tensor], value: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wrap ``value`` as the output of ``op`` and log it on the active tape.

    The output requires grad when any input does; only then is a record kept.
    """
    check_finite(op, value)
    out = Tensor(value, dtype=value.dtype)
    needs_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape.get()
    if needs_grad and tape is not None:
        if tape.consumed:
            raise ContractError("tape already consumed by backward; open a new Tape")
        out.requires_grad = True
        tape.records.append(TapeRecord(op, tuple(inputs), out, backward))
    return out


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Reverse-mode pass from a scalar ``loss``.

    Returns gradients keyed by ``Tensor.uid`` for every leaf that requires grad
    and was consumed on the tape. Leaves listed in ``params`` that the loss does
    not reach get a zero gradient. Gradients of a tensor used more than once
    are summed.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise ContractError("backward already ran on this tape")
    if tape.records and not tape.produced(loss) and loss.requires_grad:
        raise ContractError("loss was not produced on this tape")
    tape.consumed = True

    produced = {r.output.uid for r in tape.records}
    grads: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}

    for rec in reversed(tape.records):
        g_out = grads.pop(rec.output.uid, None)
        if g_out is None:
            continue
        in_grads = rec.backward(g_out)
        for tensor, g in zip(rec.inputs, in_grads):
            if g is None or not tensor.requires_grad:
                continue
            if tensor.uid not in produced:
                leaves[tensor.uid] = tensor
            if tensor.uid in grads:
                grads[tensor.uid] = grads[tensor.uid] + g
            else:
                grads[tensor.uid] = np.array(g, dtype=tensor.data.dtype, copy=True)

    result = {uid: grads[uid] for uid in leaves if uid in grads}
    for p in params or ():
        if p.uid not in result:
            result[p.uid] = np.zeros_like(p.data)
    return result
