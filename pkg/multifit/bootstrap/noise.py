"""Label-noise robustness: train pretrained-initialized and randomly
initialized classifiers on perturbed labels and score both on clean data."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from multifit.exception import ConfigError
from multifit.logger import GLOBAL_LOGGER as log
from multifit.network import ModelConfig
from multifit.tokenizer import TokenizerModel
from multifit.training import (
    LabeledDataset,
    TrainConfig,
    evaluate_classifier,
    finetune_classifier,
    split_validation,
)
from multifit.utils.checkpoint import Checkpoint
from multifit.utils.metrics import MetricsLog

MAX_STUDIED_NOISE = 0.75
RESULT_COLUMNS = ["p", "acc_pretrained", "acc_random", "baseline"]


@dataclass(frozen=True)
class NoiseSpec:
    probability: float
    seed: int
    n_classes: int

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError(f"noise probability must be in [0, 1], got {self.probability}")
        if self.n_classes < 2:
            raise ConfigError(f"label noise needs at least 2 classes, got {self.n_classes}")


def perturb_labels(data: LabeledDataset, spec: NoiseSpec) -> LabeledDataset:
    """With probability p per example, replace the label by a uniformly drawn different class."""
    if spec.n_classes != data.n_classes:
        raise ConfigError(f"noise spec has {spec.n_classes} classes, dataset has {data.n_classes}")
    rng = np.random.default_rng(spec.seed)
    labels = data.labels.copy()
    flip = rng.random(len(labels)) < spec.probability
    offsets = rng.integers(1, spec.n_classes, size=len(labels))
    labels[flip] = (labels[flip] + offsets[flip]) % spec.n_classes
    return data.with_labels(labels, split=f"{data.split}-noisy")


@dataclass(frozen=True)
class _Job:
    p: float
    seed: int
    pretrained: bool


def _run_job(
    job: _Job,
    checkpoint: Checkpoint | None,
    train: LabeledDataset,
    test: LabeledDataset,
    tokenizer: TokenizerModel,
    train_config: TrainConfig,
    model_config: ModelConfig,
    valid_fraction: float,
) -> float:
    noisy = perturb_labels(train, NoiseSpec(job.p, job.seed, train.n_classes))
    train_idx, valid_idx = split_validation(range(len(noisy)), valid_fraction)
    result = finetune_classifier(
        checkpoint if job.pretrained else None,
        noisy.subset(train_idx),
        noisy.subset(valid_idx, split="valid"),
        tokenizer,
        train_config,
        job.seed,
        model_config=model_config,
        metrics=MetricsLog(),
        stage="noise-bench",
    )
    cp = result.checkpoint
    accuracy = evaluate_classifier(cp.params, cp.model_config, test, tokenizer, train_config.clf_batch).accuracy
    log.info("Noise run finished", p=job.p, seed=job.seed, pretrained=job.pretrained, accuracy=round(accuracy, 4))
    return accuracy


def noise_robustness_run(
    lm_checkpoint: Checkpoint | None,
    train: LabeledDataset,
    test: LabeledDataset,
    tokenizer: TokenizerModel,
    train_config: TrainConfig,
    grid: Sequence[float] = (0.0, 0.25, 0.5, 0.75),
    seeds: Sequence[int] = (0,),
    model_config: ModelConfig | None = None,
    workers: int = 1,
    valid_fraction: float = 0.1,
    out_path: str | Path | None = None,
    plot_path: str | Path | None = None,
) -> pd.DataFrame:
    """Accuracy on clean ``test`` per noise level, averaged over ``seeds``.

    Without a checkpoint only the random-init column is filled. Paired runs
    may execute on a thread pool; rows do not depend on completion order.
    """
    grid = [float(p) for p in grid]
    if not grid or any(not 0.0 <= p <= MAX_STUDIED_NOISE for p in grid):
        raise ConfigError(f"noise grid must be non-empty within [0, {MAX_STUDIED_NOISE}], got {grid}")
    if not seeds:
        raise ConfigError("at least one seed is required")
    config = lm_checkpoint.model_config if lm_checkpoint is not None else model_config
    if config is None:
        raise ConfigError("a model config is required when no language model checkpoint is given")

    inits = (True, False) if lm_checkpoint is not None else (False,)
    jobs = [_Job(p, seed, pre) for p in grid for seed in seeds for pre in inits]
    log.info("Noise robustness run", grid=grid, seeds=list(seeds), jobs=len(jobs), workers=workers)

    def run(job: _Job) -> tuple[_Job, float]:
        return job, _run_job(job, lm_checkpoint, train, test, tokenizer, train_config, config, valid_fraction)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = dict(pool.map(run, jobs))
    else:
        outcomes = dict(run(job) for job in jobs)

    rows = []
    for p in grid:
        def mean_acc(pretrained: bool) -> float:
            accs = [outcomes[_Job(p, s, pretrained)] for s in seeds if _Job(p, s, pretrained) in outcomes]
            return float(np.mean(accs)) if accs else float("nan")

        rows.append({"p": p, "acc_pretrained": mean_acc(True), "acc_random": mean_acc(False), "baseline": 1.0 - p})
    table = pd.DataFrame(rows, columns=RESULT_COLUMNS)

    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(out_path, sep="\t", index=False, float_format="%.4f")
        log.info("Noise table written", path=str(out_path))
    if plot_path is not None:
        plot_noise_table(table, plot_path)
    return table


def plot_noise_table(table: pd.DataFrame, path: str | Path) -> Path | None:
    """Accuracy versus noise level with the 1 - p baseline; needs matplotlib."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed, skipping the robustness plot", path=str(path))
        return None
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    if table["acc_pretrained"].notna().any():
        ax.plot(table["p"], table["acc_pretrained"], marker="o", label="pretrained")
    ax.plot(table["p"], table["acc_random"], marker="s", label="random init")
    ax.plot(table["p"], table["baseline"], linestyle="--", color="gray", label="1 - p")
    ax.set_xlabel("label noise probability")
    ax.set_ylabel("test accuracy")
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    log.info("Robustness plot written", path=str(path))
    return path
