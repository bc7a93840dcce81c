import numpy as np

from multifit.exception import ContractError
from multifit.numerics import Tensor
from multifit.numerics import ops


def _flatten(logits: Tensor, targets) -> tuple[Tensor, np.ndarray]:
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    k = logits.shape[-1]
    flat = ops.reshape(logits, (-1, k)) if logits.data.ndim != 2 else logits
    if flat.shape[0] != targets.size:
        raise ContractError(f"{flat.shape[0]} logit rows for {targets.size} targets")
    if k < 2:
        raise ContractError(f"need at least 2 classes, got {k}")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ContractError(f"target class out of range [0, {k}): min {targets.min()}, max {targets.max()}")
    return flat, targets


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under softmax(logits)."""
    flat, targets = _flatten(logits, targets)
    picked = ops.pick(ops.log_softmax(flat), targets)
    return ops.mul(ops.mean(picked), -1.0)


def label_smoothed_loss(logits: Tensor, targets, eps: float) -> Tensor:
    """Cross-entropy against q = (1 - eps) * onehot(target) + eps / K, batch mean."""
    if not 0.0 <= eps < 1.0:
        raise ContractError(f"label smoothing eps must be in [0, 1), got {eps}")
    flat, targets = _flatten(logits, targets)
    n, k = flat.shape
    q = np.full((n, k), eps / k, dtype=flat.dtype)
    q[np.arange(n), targets] += 1.0 - eps
    weighted = ops.mul(ops.log_softmax(flat), q)
    return ops.mul(ops.sum(weighted), -1.0 / n)
