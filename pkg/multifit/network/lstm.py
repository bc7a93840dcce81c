"""Reference LSTM cell. It exists for the QRNN/LSTM speed comparison and is
deliberately sequential over time."""
import numpy as np

from multifit.exception import ConfigError
from multifit.numerics import Tensor
from multifit.numerics import ops


def lstm_cell_forward(
    x: Tensor,
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
    h0: Tensor,
    c0: Tensor,
) -> tuple[Tensor, tuple[Tensor, Tensor]]:
    """Standard LSTM over x [T, B, Din]; gate order (input, forget, cell, output)."""
    hidden = w_hh.shape[0]
    if w_ih.shape != (x.shape[2], 4 * hidden) or w_hh.shape != (hidden, 4 * hidden) or bias.shape != (4 * hidden,):
        raise ConfigError(f"LSTM weights {w_ih.shape}/{w_hh.shape}/{bias.shape} do not fit input {x.shape}")
    if h0.shape != (x.shape[1], hidden) or c0.shape != h0.shape:
        raise ConfigError(f"LSTM state {h0.shape}/{c0.shape} does not match batch {x.shape[1]} x hidden {hidden}")

    projected = ops.linear(x, w_ih, bias)
    h, c = h0, c0
    outputs = []
    for t in range(x.shape[0]):
        gates = ops.add(ops.index_time(projected, t), ops.matmul(h, w_hh))
        i = ops.sigmoid(ops.slice_last(gates, 0, hidden))
        f = ops.sigmoid(ops.slice_last(gates, hidden, 2 * hidden))
        g = ops.tanh(ops.slice_last(gates, 2 * hidden, 3 * hidden))
        o = ops.sigmoid(ops.slice_last(gates, 3 * hidden, 4 * hidden))
        c = ops.add(ops.mul(f, c), ops.mul(i, g))
        h = ops.mul(o, ops.tanh(c))
        outputs.append(h)
    return ops.stack_time(outputs), (h, c)


def init_lstm_layer(rng: np.random.Generator, d_in: int, hidden: int) -> dict[str, np.ndarray]:
    bound = 1.0 / np.sqrt(hidden)
    return {
        "w_ih": rng.uniform(-bound, bound, (d_in, 4 * hidden)),
        "w_hh": rng.uniform(-bound, bound, (hidden, 4 * hidden)),
        "bias": np.zeros(4 * hidden),
    }
