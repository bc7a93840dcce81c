from typing import Iterator

import numpy as np

from multifit.exception import ContractError
from multifit.numerics import Tensor


class Parameters:
    """Named tensors of a model.

    ``tie(alias, target)`` makes ``alias`` resolve to the very same Tensor as
    ``target`` (shared storage). Buffers (batch-norm running statistics) are
    stored and persisted but never optimized.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self.ties: dict[str, str] = {}
        self.buffers: set[str] = set()

    def add(self, name: str, data: np.ndarray, buffer: bool = False, dtype=None) -> Tensor:
        if name in self._tensors or name in self.ties:
            raise ContractError(f"duplicate parameter name {name!r}")
        tensor = Tensor(data, requires_grad=not buffer, name=name, dtype=dtype)
        self._tensors[name] = tensor
        if buffer:
            self.buffers.add(name)
        return tensor

    def tie(self, alias: str, target: str) -> None:
        if target not in self._tensors:
            raise ContractError(f"cannot tie {alias!r} to unknown parameter {target!r}")
        if alias in self._tensors:
            raise ContractError(f"{alias!r} already holds its own tensor")
        self.ties[alias] = target

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[self.ties.get(name, name)]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors or name in self.ties

    def __iter__(self) -> Iterator[str]:
        yield from self._tensors
        yield from self.ties

    def __len__(self) -> int:
        return len(self._tensors) + len(self.ties)

    def stored(self) -> dict[str, Tensor]:
        """Every distinct tensor once (aliases excluded), buffers included."""
        return dict(self._tensors)

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self._tensors.items() if n not in self.buffers}

    def num_trainable(self) -> int:
        return sum(t.size for t in self.trainable().values())

    def clone(self, dtype=None) -> "Parameters":
        out = Parameters()
        for name, t in self._tensors.items():
            out.add(name, np.array(t.data, copy=True), buffer=name in self.buffers, dtype=dtype or t.dtype)
        for alias, target in self.ties.items():
            out.tie(alias, target)
        return out

    def assign_from(self, other: "Parameters") -> None:
        """Copy values in place (keeps tensor identities and ties)."""
        for name, t in self._tensors.items():
            np.copyto(t.data, other.stored()[name].data.astype(t.dtype))
