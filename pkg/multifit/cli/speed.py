"""Per-batch training speed of the QRNN and LSTM cells at matched sizes."""
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from multifit.exception import ConfigError
from multifit.logger import GLOBAL_LOGGER as log
from multifit.network import ModelConfig, RecurrentState, build_language_model
from multifit.training import LanguageModelLearner, TrainConfig

MIN_REPS = 5


@dataclass(frozen=True)
class BenchDims:
    vocab_size: int = 1000
    emb_dim: int = 64
    hidden: int = 64
    n_layers: int = 2
    bptt: int = 70
    batch: int = 64


@dataclass
class BenchResult:
    cell: str
    median_ms: float
    times_ms: list[float]


def speed_benchmark(cell: str, dims: BenchDims, reps: int = MIN_REPS, warmup: int = 3, seed: int = 0) -> BenchResult:
    """Median wall time of one forward+backward+update over ``reps`` timed batches.

    ``warmup`` untimed batches run first.
    """
    if reps < MIN_REPS:
        raise ConfigError(f"speed benchmark needs at least {MIN_REPS} reps, got {reps}")
    if warmup < 0:
        raise ConfigError(f"warmup must be >= 0, got {warmup}")
    config = ModelConfig(vocab_size=dims.vocab_size, emb_dim=dims.emb_dim, hidden_dim=dims.hidden,
                         n_layers=dims.n_layers, cell=cell)
    learner = LanguageModelLearner(build_language_model(config, seed), config, TrainConfig(), seed)
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, dims.vocab_size, size=(dims.bptt + 1, dims.batch))
    inputs, targets = tokens[:-1], tokens[1:]
    state = RecurrentState.zeros(config, dims.batch)

    times = []
    for i in range(warmup + reps):
        start = time.perf_counter()
        learner.step(inputs, targets, state, lr=1e-3, momentum=0.9)
        elapsed = (time.perf_counter() - start) * 1000.0
        if i >= warmup:
            times.append(elapsed)
    result = BenchResult(cell, float(np.median(times)), times)
    log.info("Speed benchmark", cell=cell, median_ms=round(result.median_ms, 3), reps=reps, **dims.__dict__)
    return result


def compare_cells(
    dims: BenchDims,
    cells: Sequence[str] = ("qrnn", "lstm"),
    reps: int = MIN_REPS,
    warmup: int = 3,
    seed: int = 0,
    out_path: str | Path | None = None,
) -> pd.DataFrame:
    """One row per cell with its median ms and the ratio to the first cell."""
    results = [speed_benchmark(cell, dims, reps, warmup, seed) for cell in cells]
    reference = results[0].median_ms
    table = pd.DataFrame(
        [{"cell": r.cell, "median_ms": r.median_ms, "ratio": r.median_ms / reference} for r in results]
    )
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(out_path, sep="\t", index=False, float_format="%.3f")
        log.info("Speed table written", path=str(out_path))
    return table
