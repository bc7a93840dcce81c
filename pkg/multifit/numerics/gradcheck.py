from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from multifit.exception import ContractError
from multifit.logger import GLOBAL_LOGGER as log
from multifit.numerics.tensor import Tape, Tensor, backward, no_record

ModelBuilder = Callable[[], tuple[Mapping[str, Tensor], Callable[[], Tensor]]]


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    max_abs_error: float
    size: int


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.max_error < tolerance

    def lines(self) -> list[str]:
        return [f"{e.name}\t{e.size}\t{e.max_rel_error:.3e}\t{e.max_abs_error:.3e}" for e in self.entries]


def check_gradients(model_builder: ModelBuilder, eps: float = 1e-6) -> GradCheckReport:
    """Compare backward against central differences (f(p+eps) - f(p-eps)) / 2eps.

    ``model_builder`` returns the named leaf tensors and a zero-argument loss
    function. All parameters must be 64-bit. The relative error of a parameter
    is max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-12).
    """
    if eps <= 0:
        raise ContractError(f"eps must be > 0, got {eps}")
    params, loss_fn = model_builder()
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ContractError(f"gradient check needs float64 parameters, {name} is {p.dtype}")

    with Tape() as tape:
        loss = loss_fn()
    grads = backward(tape, loss, list(params.values()))

    report = GradCheckReport()
    with no_record():
        for name, p in params.items():
            analytic = grads[p.uid]
            numeric = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = loss_fn().item()
                flat[i] = orig - eps
                f_minus = loss_fn().item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (f_plus - f_minus) / (2 * eps)
            diff = float(np.max(np.abs(analytic - numeric))) if flat.size else 0.0
            scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), 1e-12)
            report.entries.append(GradCheckEntry(name, diff / scale, diff, int(flat.size)))

    report.entries.sort(key=lambda e: e.max_rel_error, reverse=True)
    log.info("Gradient check finished", parameters=len(report.entries), max_rel_error=report.max_error)
    return report
