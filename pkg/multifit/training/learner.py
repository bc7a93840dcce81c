"""A learner owns parameters, optimizer state and the step counter; ``step``
runs one forward/backward/update and is the unit every stage is built from."""
import math
from dataclasses import dataclass, field

import numpy as np

from multifit.network import (
    DECODER_BIAS,
    EMBEDDING,
    ModelConfig,
    Parameters,
    RecurrentState,
    classifier_logits,
    lm_forward,
)
from multifit.network.language_model import layer_prefix
from multifit.numerics import OptimizerState, Tape, adam_step, backward, clip_grad_norm
from multifit.tokenizer import TokenizerModel
from multifit.training.config import TrainConfig
from multifit.training.data import LabeledDataset, PaddedBatch, bptt_batchify, encode_examples, pad_batches
from multifit.training.losses import cross_entropy, label_smoothed_loss
from multifit.training.schedule import discriminative_lr_groups


def layer_groups(params: Parameters, config: ModelConfig) -> list[list[str]]:
    """Trainable names grouped from the embedding (group 0) up to the top.

    Language models: embedding | layer 0 | ... | last layer + decoder bias.
    Classifiers: embedding | layer 0 | ... | last layer | head.
    """
    trainable = params.trainable()
    groups = [[EMBEDDING]]
    for i in range(config.n_layers):
        prefix = layer_prefix(i) + "."
        groups.append([name for name in trainable if name.startswith(prefix)])
    head = [name for name in trainable if name.startswith("head.")]
    if head:
        groups.append(head)
    elif DECODER_BIAS in trainable:
        groups[-1].append(DECODER_BIAS)
    return groups


@dataclass
class Learner:
    params: Parameters
    config: ModelConfig
    train: TrainConfig
    seed: int
    optimizer: OptimizerState | None = None
    groups: list[list[str]] = field(init=False)

    def __post_init__(self):
        if self.optimizer is None:
            self.optimizer = OptimizerState(
                beta2=self.train.beta2, eps=self.train.adam_eps, weight_decay=self.train.weight_decay
            )
        self.groups = layer_groups(self.params, self.config)

    @property
    def step_count(self) -> int:
        return self.optimizer.step

    def step_rng(self) -> np.random.Generator:
        # dropout masks depend only on (seed, step), so a resumed learner repeats them
        return np.random.default_rng([self.seed, self.optimizer.step])

    def group_lrs(self, base_lr: float, factor: float) -> dict[str, float]:
        rates = discriminative_lr_groups(base_lr, len(self.groups), factor)
        return {name: rate for group, rate in zip(self.groups, rates) for name in group}

    def _update(self, tape: Tape, loss, lr: float, momentum: float, factor: float) -> float:
        trainable = self.params.trainable()
        grads = backward(tape, loss, list(trainable.values()))
        norm = clip_grad_norm(grads, self.train.clip)
        adam_step(trainable, grads, self.optimizer, self.group_lrs(lr, factor), momentum)
        return norm


class LanguageModelLearner(Learner):
    def step(
        self,
        inputs: np.ndarray,
        targets: np.ndarray,
        state: RecurrentState,
        lr: float,
        momentum: float,
        dropout_mult: float = 0.0,
        factor: float = 1.0,
    ) -> tuple[float, RecurrentState]:
        rng = self.step_rng()
        with Tape() as tape:
            logits, new_state = lm_forward(self.params, inputs, state, self.config, True, dropout_mult, rng)
            loss = cross_entropy(logits, targets)
        self._update(tape, loss, lr, momentum, factor)
        return loss.item(), new_state.detach()


class ClassifierLearner(Learner):
    def step(
        self,
        batch: PaddedBatch,
        lr: float,
        momentum: float,
        dropout_mult: float = 0.0,
        factor: float = 1.0,
        eps: float = 0.0,
    ) -> float:
        rng = self.step_rng()
        with Tape() as tape:
            logits = classifier_logits(
                self.params, batch.ids, batch.lengths, self.config, True, dropout_mult, rng
            )
            loss = label_smoothed_loss(logits, batch.labels, eps)
        self._update(tape, loss, lr, momentum, factor)
        return loss.item()


# ---------- evaluation ----------
@dataclass
class LMEvaluation:
    loss: float
    perplexity: float
    tokens: int


def evaluate_lm(
    params: Parameters,
    config: ModelConfig,
    stream: np.ndarray,
    batch: int,
    bptt: int,
) -> LMEvaluation:
    """Dropout-free token-weighted mean loss and perplexity over a stream."""
    stream = np.asarray(stream)
    batch = max(1, min(batch, stream.size // 2))
    windows = bptt_batchify(stream, batch, bptt)
    state = RecurrentState.zeros(config, batch, dtype=params[EMBEDDING].dtype)
    total, count = 0.0, 0
    for inputs, targets in windows:
        logits, state = lm_forward(params, inputs, state, config)
        total += cross_entropy(logits, targets).item() * targets.size
        count += targets.size
    loss = total / count
    return LMEvaluation(loss, math.exp(loss), count)


@dataclass
class ClassifierEvaluation:
    accuracy: float
    predictions: np.ndarray


def evaluate_classifier(
    params: Parameters,
    config: ModelConfig,
    dataset: LabeledDataset,
    tokenizer: TokenizerModel,
    batch: int = 18,
    encoded: list[list[int]] | None = None,
) -> ClassifierEvaluation:
    """Evaluation-mode accuracy (frozen batch-norm statistics, no dropout)."""
    encoded = encoded if encoded is not None else encode_examples(dataset, tokenizer)
    predictions = []
    for padded in pad_batches(dataset, tokenizer, batch, encoded=encoded):
        logits = classifier_logits(params, padded.ids, padded.lengths, config)
        predictions.append(logits.data.argmax(axis=1))
    predictions = np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)
    accuracy = float(np.mean(predictions == dataset.labels)) if len(dataset) else 0.0
    return ClassifierEvaluation(accuracy, predictions)
