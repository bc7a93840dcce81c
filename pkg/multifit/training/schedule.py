import math

from multifit.exception import ContractError
from multifit.training.config import ScheduleConfig


def _annealing_cos(start: float, end: float, pct: float) -> float:
    """Cosine interpolation from ``start`` (pct=0) to ``end`` (pct=1)."""
    return end + (start - end) * (1.0 + math.cos(math.pi * pct)) / 2.0


def one_cycle_cosine(step: int, cfg: ScheduleConfig) -> tuple[float, float]:
    """(learning rate, momentum) at ``step`` of a single warmup/anneal cycle.

    Both phases use cosine interpolation; momentum runs in anti-phase, from
    mom_max down to mom_min at the peak and back up to mom_max.
    """
    if not 0 <= step <= cfg.total_steps:
        raise ContractError(f"step {step} outside the schedule range [0, {cfg.total_steps}]")
    peak = cfg.pct_warmup * cfg.total_steps
    lr_start = cfg.lr_max / cfg.div_start
    lr_end = cfg.lr_max / cfg.div_final
    if step <= peak:
        pct = step / peak
        return _annealing_cos(lr_start, cfg.lr_max, pct), _annealing_cos(cfg.mom_max, cfg.mom_min, pct)
    pct = (step - peak) / (cfg.total_steps - peak)
    return _annealing_cos(cfg.lr_max, lr_end, pct), _annealing_cos(cfg.mom_min, cfg.mom_max, pct)


def discriminative_lr_groups(base_lr: float, n_groups: int, factor: float) -> list[float]:
    """Group g (0 = embedding, n-1 = head) gets base_lr / factor**(n-1-g)."""
    if factor < 1.0:
        raise ContractError(f"discriminative factor must be >= 1, got {factor}")
    if n_groups < 1:
        raise ContractError(f"need at least one layer group, got {n_groups}")
    return [base_lr / factor ** (n_groups - 1 - g) for g in range(n_groups)]
