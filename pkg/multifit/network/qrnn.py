"""Quasi-recurrent layer: causal convolution producing candidate, forget and
output gates, followed by fo-pooling across time."""
import numpy as np

from multifit.exception import ConfigError, ContractError
from multifit.numerics import Tensor, record
from multifit.numerics import ops


def fo_recurrence(z: Tensor, f: Tensor, c0: Tensor) -> Tensor:
    """All cell states c_t = f_t * c_{t-1} + (1 - f_t) * z_t, as [T, B, H]."""
    if z.shape != f.shape or z.data.ndim != 3 or c0.shape != z.shape[1:]:
        raise ContractError(f"fo-pool shape mismatch: z {z.shape}, f {f.shape}, c0 {c0.shape}")
    T = z.shape[0]
    c = np.empty_like(z.data)
    prev = c0.data
    for t in range(T):
        prev = f.data[t] * prev + (1 - f.data[t]) * z.data[t]
        c[t] = prev

    def _backward(g):
        gz = np.empty_like(z.data)
        gf = np.empty_like(f.data)
        carry = np.zeros_like(c0.data)
        for t in range(T - 1, -1, -1):
            dc = g[t] + carry
            before = c[t - 1] if t > 0 else c0.data
            gz[t] = dc * (1 - f.data[t])
            gf[t] = dc * (before - z.data[t])
            carry = dc * f.data[t]
        return gz, gf, carry

    return record("fo_pool", (z, f, c0), c, _backward)


def fo_pool(z: Tensor, f: Tensor, o: Tensor, c0: Tensor) -> tuple[Tensor, Tensor]:
    """h_t = o_t * c_t over the fo recurrence; returns (h [T,B,H], c_T [B,H])."""
    if o.shape != z.shape:
        raise ContractError(f"fo-pool shape mismatch: z {z.shape}, o {o.shape}")
    c = fo_recurrence(z, f, c0)
    h = ops.mul(o, c)
    return h, ops.index_time(c, z.shape[0] - 1)


def qrnn_layer_forward(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    c0: Tensor,
    hidden_dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    history: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """One QRNN layer on x [T, B, Din].

    ``weight`` is [width, Din, 3H]: one causal window feeds Z (tanh), F and O
    (sigmoid). With ``hidden_dropout`` > 0 (training), dropped channels get
    their forget gate forced to 1, carrying the previous cell state unchanged.
    ``history`` holds the inputs that precede x[0] (tail of the previous window).
    """
    if weight.data.ndim != 3 or weight.shape[2] % 3:
        raise ConfigError(f"QRNN weight must be [width, Din, 3H], got {weight.shape}")
    hidden = weight.shape[2] // 3
    if c0.shape != (x.shape[1], hidden):
        raise ConfigError(f"state shape {c0.shape} does not match batch {x.shape[1]} x hidden {hidden}")
    gates = ops.causal_conv_over_time(x, weight, bias, history)
    z = ops.tanh(ops.slice_last(gates, 0, hidden))
    f = ops.sigmoid(ops.slice_last(gates, hidden, 2 * hidden))
    o = ops.sigmoid(ops.slice_last(gates, 2 * hidden, 3 * hidden))
    if hidden_dropout > 0.0:
        if rng is None:
            raise ContractError("hidden dropout needs a random generator")
        keep = (rng.random(f.shape) >= hidden_dropout).astype(f.dtype)
        f = ops.sub(1.0, ops.mul(ops.sub(1.0, f), keep))
    return fo_pool(z, f, o, c0)
