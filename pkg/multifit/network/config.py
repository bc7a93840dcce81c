from dataclasses import dataclass, field, fields
from typing import Literal

from multifit.exception import ConfigError

CellKind = Literal["qrnn", "lstm"]


@dataclass(frozen=True)
class DropoutProfile:
    """Base dropout rates; every stage scales them by its own multiplier
    (0.0 pretraining, 0.3 LM fine-tuning, 0.5 classification)."""

    embedding: float = 0.1
    input: float = 0.15
    hidden: float = 0.15
    output: float = 0.25

    def __post_init__(self):
        for f in fields(self):
            rate = getattr(self, f.name)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"dropout.{f.name} must be in [0, 1), got {rate}")

    def rate(self, name: str, multiplier: float) -> float:
        return min(getattr(self, name) * multiplier, 0.95)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 15_000
    emb_dim: int = 400
    hidden_dim: int = 1550
    n_layers: int = 4
    qrnn_widths: tuple[int, ...] | None = None
    cell: CellKind = "qrnn"
    dropout: DropoutProfile = field(default_factory=DropoutProfile)
    head_hidden: int = 50
    bn_momentum: float = 0.1
    init_range: float = 0.1

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        for name in ("vocab_size", "emb_dim", "hidden_dim", "head_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.cell not in ("qrnn", "lstm"):
            raise ConfigError(f"cell must be 'qrnn' or 'lstm', got {self.cell!r}")
        if self.qrnn_widths is None:
            # width 2 on the first layer, 1 above it
            object.__setattr__(self, "qrnn_widths", (2,) + (1,) * (self.n_layers - 1))
        else:
            object.__setattr__(self, "qrnn_widths", tuple(int(w) for w in self.qrnn_widths))
        if len(self.qrnn_widths) != self.n_layers:
            raise ConfigError(f"qrnn_widths has {len(self.qrnn_widths)} entries for {self.n_layers} layers")
        if any(w < 1 for w in self.qrnn_widths):
            raise ConfigError(f"qrnn widths must be >= 1, got {self.qrnn_widths}")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ConfigError(f"bn_momentum must be in (0, 1], got {self.bn_momentum}")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(input, output) width per recurrent layer; the last one emits emb_dim
        so the decoder can reuse the embedding matrix."""
        dims = []
        for i in range(self.n_layers):
            d_in = self.emb_dim if i == 0 else self.hidden_dim
            d_out = self.emb_dim if i == self.n_layers - 1 else self.hidden_dim
            dims.append((d_in, d_out))
        return dims

    ENCODER_FIELDS = ("vocab_size", "emb_dim", "hidden_dim", "n_layers", "qrnn_widths", "cell")

    def encoder_mismatch(self, other: "ModelConfig") -> list[str]:
        return [name for name in self.ENCODER_FIELDS if getattr(self, name) != getattr(other, name)]
