"""Differentiable primitives. Every op validates shapes, computes the forward
value with numpy, and registers a backward closure through ``record``."""
from typing import Literal, Sequence

import numpy as np

from multifit.exception import ConfigError, ContractError, DimensionError
from multifit.numerics.tensor import Tensor, default_dtype, record

ActivationKind = Literal["sigmoid", "tanh", "relu"]


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------- elementwise ----------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return record("add", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return record("sub", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return record("mul", (a, b), out,
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def power(x: Tensor, exponent: float) -> Tensor:
    out = x.data ** exponent
    return record("power", (x,), out, lambda g: (g * exponent * x.data ** (exponent - 1),))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form avoids overflow in exp for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)
    return record("relu", (x,), out, lambda g: (g * mask,))


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def activation(x: Tensor, kind: ActivationKind) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation '{kind}', expected one of {sorted(_ACTIVATIONS)}")
    return fn(x)


# ---------- reductions and shape ----------
def sum(x: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return record("sum", (x,), out, _backward)


def mean(x: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, x.shape) / count).astype(x.dtype),)

    return record("mean", (x,), out, _backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return record("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    out = np.transpose(x.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return record("transpose", (x,), out, lambda g: (np.transpose(g, inverse),))


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.data[..., start:stop]

    def _backward(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return record("slice_last", (x,), np.ascontiguousarray(out), _backward)


def index_time(x: Tensor, t: int) -> Tensor:
    out = x.data[t]

    def _backward(g):
        full = np.zeros_like(x.data)
        full[t] = g
        return (full,)

    return record("index_time", (x,), np.ascontiguousarray(out), _backward)


def stack_time(steps: Sequence[Tensor]) -> Tensor:
    out = np.stack([s.data for s in steps], axis=0)
    return record("stack_time", tuple(steps), out, lambda g: tuple(g[i] for i in range(len(steps))))


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    out = np.concatenate([p.data for p in parts], axis=-1)
    bounds = np.cumsum([0] + [p.shape[-1] for p in parts])
    return record("concat_last", tuple(parts), out,
                  lambda g: tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(parts))))


# ---------- linear algebra ----------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a.data @ b.data
    return record("matmul", (a, b), out, lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[..., Din] @ weight[Din, Dout] + bias`` over any leading dims."""
    if weight.data.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear shape mismatch: {x.shape} x {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    acc = x2 @ weight.data
    if bias is not None:
        acc = acc + bias.data
    out = acc.reshape(*lead, weight.shape[1])

    def _backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        grads = [(g2 @ weight.data.T).reshape(x.shape), x2.T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("linear", inputs, out, _backward)


def causal_conv_over_time(x: Tensor, w: Tensor, bias: Tensor, history: np.ndarray | None = None) -> Tensor:
    """y[t] = sum_{i<width} x[t-i] @ w[i] + bias, with x[t<0] = 0.

    x is [T, B, Din], w is [width, Din, Dout]. ``history`` optionally supplies
    the inputs preceding x[0] (constant, e.g. the tail of the previous BPTT
    window) instead of zeros. Width 1 computes exactly ``linear(x, w[0], bias)``.
    """
    if w.data.ndim != 3 or w.shape[0] < 1:
        raise ConfigError(f"conv width must be >= 1, got weight shape {w.shape}")
    if x.data.ndim != 3 or x.shape[0] < 1:
        raise DimensionError(f"conv input must be [T, B, Din] with T >= 1, got {x.shape}")
    width, d_in, d_out = w.shape
    if x.shape[2] != d_in or bias.shape != (d_out,):
        raise DimensionError(f"conv shape mismatch: x {x.shape}, w {w.shape}, bias {bias.shape}")

    T, B, _ = x.shape
    k = 0 if history is None else history.shape[0]
    if k and history.shape[1:] != (B, d_in):
        raise DimensionError(f"conv history {history.shape} does not match input {x.shape}")
    full = x.data if k == 0 else np.concatenate([history.astype(x.dtype), x.data], axis=0)
    steps = T + k
    x2 = full.reshape(steps * B, d_in)
    acc = x2 @ w.data[0]
    for i in range(1, min(width, steps)):
        acc[i * B:] += x2[: (steps - i) * B] @ w.data[i]
    out = (acc[k * B:] + bias.data).reshape(T, B, d_out)

    def _backward(g):
        g2 = np.zeros((steps * B, d_out), dtype=g.dtype)
        g2[k * B:] = g.reshape(T * B, d_out)
        gx = g2 @ w.data[0].T
        gw = np.zeros_like(w.data)
        gw[0] = x2.T @ g2
        for i in range(1, min(width, steps)):
            gx[: (steps - i) * B] += g2[i * B:] @ w.data[i].T
            gw[i] = x2[: (steps - i) * B].T @ g2[i * B:]
        return gx[k * B:].reshape(x.shape), gw, g2.sum(axis=0)

    return record("causal_conv", (x, w, bias), out, _backward)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ContractError(f"token id out of range [0, {weight.shape[0]}): min {ids.min()}, max {ids.max()}")
    out = weight.data[ids]

    def _backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return record("embedding", (weight,), out, _backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def _backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", (x,), out, _backward)


def pick(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather ``x[i, index[i]]`` from a 2-D tensor (used for NLL)."""
    rows = np.arange(x.shape[0])
    out = x.data[rows, index]

    def _backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, index), g)
        return (full,)

    return record("pick", (x,), np.ascontiguousarray(out), _backward)
