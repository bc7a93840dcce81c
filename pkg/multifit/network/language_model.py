from dataclasses import dataclass

import numpy as np

from multifit.exception import ContractError
from multifit.numerics import Tensor, default_dtype
from multifit.numerics import ops
from multifit.network.config import ModelConfig
from multifit.network.lstm import init_lstm_layer, lstm_cell_forward
from multifit.network.parameters import Parameters
from multifit.network.qrnn import qrnn_layer_forward

EMBEDDING = "embedding.weight"
DECODER_WEIGHT = "decoder.weight"
DECODER_BIAS = "decoder.bias"


def layer_prefix(i: int) -> str:
    return f"encoder.layers.{i}"


@dataclass
class RecurrentState:
    """Per-layer cell states, plus the trailing conv inputs of each QRNN layer
    (or the hidden states of LSTM layers). Plain arrays, so no gradient can
    flow across BPTT windows."""

    cells: list[np.ndarray]
    hidden: list[np.ndarray] | None = None
    conv_inputs: list[np.ndarray] | None = None

    @classmethod
    def zeros(cls, config: ModelConfig, batch: int, dtype=None) -> "RecurrentState":
        dtype = dtype or default_dtype()
        cells = [np.zeros((batch, d_out), dtype=dtype) for _, d_out in config.layer_dims()]
        if config.cell == "lstm":
            return cls(cells, hidden=[c.copy() for c in cells])
        history = [
            np.zeros((width - 1, batch, d_in), dtype=dtype)
            for width, (d_in, _) in zip(config.qrnn_widths, config.layer_dims())
        ]
        return cls(cells, conv_inputs=history)

    def detach(self) -> "RecurrentState":
        return RecurrentState(
            [c.copy() for c in self.cells],
            None if self.hidden is None else [h.copy() for h in self.hidden],
            None if self.conv_inputs is None else [x.copy() for x in self.conv_inputs],
        )


def init_encoder(params: Parameters, config: ModelConfig, rng: np.random.Generator) -> None:
    r = config.init_range
    params.add(EMBEDDING, rng.uniform(-r, r, (config.vocab_size, config.emb_dim)))
    for i, (d_in, d_out) in enumerate(config.layer_dims()):
        prefix = layer_prefix(i)
        if config.cell == "qrnn":
            width = config.qrnn_widths[i]
            bound = 1.0 / np.sqrt(width * d_in)
            params.add(f"{prefix}.weight", rng.uniform(-bound, bound, (width, d_in, 3 * d_out)))
            params.add(f"{prefix}.bias", np.zeros(3 * d_out))
        else:
            for name, value in init_lstm_layer(rng, d_in, d_out).items():
                params.add(f"{prefix}.{name}", value)


def build_language_model(config: ModelConfig, seed: int) -> Parameters:
    """Embedding, recurrent stack and a decoder whose weight *is* the embedding."""
    rng = np.random.default_rng(seed)
    params = Parameters()
    init_encoder(params, config, rng)
    params.add(DECODER_BIAS, np.zeros(config.vocab_size))
    params.tie(DECODER_WEIGHT, EMBEDDING)
    return params


def _variational_mask(rng: np.random.Generator, shape: tuple[int, ...], rate: float, dtype) -> np.ndarray:
    # one mask per sequence, shared across time steps
    keep = rng.random((1,) + shape[1:]) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


def _conv_tail(history: np.ndarray | None, x: np.ndarray, keep: int) -> np.ndarray:
    """The last ``keep`` conv inputs seen so far, for the next window."""
    if keep == 0:
        return np.zeros((0,) + x.shape[1:], dtype=x.dtype)
    seen = x if history is None else np.concatenate([history.astype(x.dtype), x], axis=0)
    if seen.shape[0] < keep:
        pad = np.zeros((keep - seen.shape[0],) + x.shape[1:], dtype=x.dtype)
        seen = np.concatenate([pad, seen], axis=0)
    return seen[-keep:].copy()


def encoder_forward(
    params: Parameters,
    ids: np.ndarray,
    state: RecurrentState,
    config: ModelConfig,
    training: bool = False,
    dropout_mult: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, RecurrentState]:
    """ids [T, B] -> last layer outputs [T, B, emb_dim] and the next state."""
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ContractError(f"token ids must be [T, B], got shape {ids.shape}")
    drop = training and dropout_mult > 0.0
    if drop and rng is None:
        raise ContractError("training with dropout needs a random generator")
    weight = params[EMBEDDING]
    x = ops.embedding(weight, ids)

    if drop and (p := config.dropout.rate("embedding", dropout_mult)) > 0:
        # drop whole words: one decision per vocabulary row
        rows = (rng.random(config.vocab_size) >= p) / (1.0 - p)
        x = ops.mul(x, rows[ids][..., None].astype(x.dtype))

    cells, hidden, conv_inputs = [], [], []
    for i in range(config.n_layers):
        prefix = layer_prefix(i)
        if drop and (p := config.dropout.rate("input", dropout_mult)) > 0:
            x = ops.mul(x, _variational_mask(rng, x.shape, p, x.dtype))
        c0 = Tensor(state.cells[i], dtype=x.dtype)
        if config.cell == "qrnn":
            p_hidden = config.dropout.rate("hidden", dropout_mult) if drop else 0.0
            history = state.conv_inputs[i] if state.conv_inputs and state.conv_inputs[i].shape[0] else None
            conv_inputs.append(_conv_tail(history, x.data, config.qrnn_widths[i] - 1))
            x, c_last = qrnn_layer_forward(
                x, params[f"{prefix}.weight"], params[f"{prefix}.bias"], c0, p_hidden, rng, history
            )
        else:
            h0 = Tensor(state.hidden[i], dtype=x.dtype)
            x, (h_last, c_last) = lstm_cell_forward(
                x, params[f"{prefix}.w_ih"], params[f"{prefix}.w_hh"], params[f"{prefix}.bias"], h0, c0
            )
            hidden.append(h_last.data.copy())
        cells.append(c_last.data.copy())
    if config.cell == "lstm":
        return x, RecurrentState(cells, hidden=hidden)
    return x, RecurrentState(cells, conv_inputs=conv_inputs)


def lm_forward(
    params: Parameters,
    ids: np.ndarray,
    state: RecurrentState,
    config: ModelConfig,
    training: bool = False,
    dropout_mult: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, RecurrentState]:
    """ids [T, B] -> unnormalized logits [T, B, V] = h @ embedding^T + bias."""
    h, new_state = encoder_forward(params, ids, state, config, training, dropout_mult, rng)
    if training and dropout_mult > 0.0 and (p := config.dropout.rate("output", dropout_mult)) > 0:
        h = ops.mul(h, _variational_mask(rng, h.shape, p, h.dtype))
    decoder = ops.transpose(params[DECODER_WEIGHT])
    logits = ops.linear(h, decoder, params[DECODER_BIAS])
    return logits, new_state
