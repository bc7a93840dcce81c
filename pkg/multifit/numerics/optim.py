from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from multifit.exception import ContractError
from multifit.numerics.tensor import Tensor


@dataclass
class OptimizerState:
    """Adam moments per parameter name. beta1 is supplied each step by the
    schedule (cyclical momentum); beta2/eps/weight_decay are fixed."""

    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.01


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[int, np.ndarray],
    state: OptimizerState,
    lr: float | Mapping[str, float],
    beta1: float,
    wd: float | None = None,
) -> tuple[Mapping[str, Tensor], OptimizerState]:
    """One bias-corrected Adam update with decoupled weight decay.

    ``lr`` is a single rate or a per-parameter-name mapping (discriminative
    groups). Decay ``p -= lr * wd * p`` is applied before the adaptive term.
    Parameters are updated in place so shared (tied) storage stays shared.
    """
    if not 0.0 <= beta1 < 1.0:
        raise ContractError(f"beta1 must be in [0, 1), got {beta1}")
    wd = state.weight_decay if wd is None else wd
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step

    for name, p in params.items():
        rate = lr[name] if isinstance(lr, Mapping) else lr
        if rate < 0:
            raise ContractError(f"learning rate must be >= 0, got {rate} for {name}")
        g = grads.get(p.uid)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")

        m = state.exp_avg.get(name)
        v = state.exp_avg_sq.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.exp_avg[name], state.exp_avg_sq[name] = m, v

        if wd:
            p.data -= (rate * wd * p.data).astype(p.dtype)
        update = rate * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        p.data -= update.astype(p.dtype)

    return params, state


def clip_grad_norm(grads: dict[int, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.
    Returns the norm measured before clipping."""
    total = float(np.sqrt(np.sum([np.sum(np.square(g, dtype=np.float64)) for g in grads.values()])))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for uid in grads:
            grads[uid] = grads[uid] * np.asarray(scale, dtype=grads[uid].dtype)
    return total
