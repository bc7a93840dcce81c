"""The three transfer stages: LM pretraining, LM fine-tuning on target text,
and classifier fine-tuning. Each returns an in-memory checkpoint plus its
metrics history; persisting is left to the caller."""
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from multifit.exception import ConfigError, DataError, TransferError
from multifit.logger import GLOBAL_LOGGER as log
from multifit.network import (
    EMBEDDING,
    ModelConfig,
    Parameters,
    RecurrentState,
    build_classifier,
    build_language_model,
    transfer_encoder,
)
from multifit.tokenizer import TokenizerModel, model_hash
from multifit.training.config import TrainConfig
from multifit.training.data import (
    LabeledDataset,
    bptt_batchify,
    encode_examples,
    encode_stream,
    pad_batches,
    split_validation,
)
from multifit.training.learner import ClassifierLearner, LanguageModelLearner, evaluate_classifier, evaluate_lm
from multifit.training.schedule import one_cycle_cosine
from multifit.utils.checkpoint import Checkpoint
from multifit.utils.metrics import MetricsLog


@dataclass
class TrainingResult:
    checkpoint: Checkpoint
    history: list[dict[str, Any]] = field(default_factory=list)
    best_accuracy: float | None = None
    best_epoch: int | None = None


def _check_vocab(config: ModelConfig, tokenizer: TokenizerModel) -> None:
    if config.vocab_size != tokenizer.vocab_size:
        raise ConfigError(
            f"model vocab_size {config.vocab_size} does not match the tokenizer's {tokenizer.vocab_size}"
        )


def _check_compatible(checkpoint: Checkpoint, tokenizer: TokenizerModel) -> None:
    differing = []
    if checkpoint.model_config.vocab_size != tokenizer.vocab_size:
        differing.append("vocab_size")
    if checkpoint.tokenizer_hash and checkpoint.tokenizer_hash != model_hash(tokenizer):
        differing.append("tokenizer_hash")
    if differing:
        log.error("Checkpoint does not match tokenizer", fields=differing)
        raise TransferError("checkpoint was trained with a different tokenizer", fields=differing)


def _lm_streams(
    corpus: Sequence[str],
    valid_corpus: Sequence[str] | None,
    tokenizer: TokenizerModel,
    train: TrainConfig,
) -> tuple[np.ndarray, np.ndarray | None]:
    if not corpus:
        raise DataError("empty corpus: nothing to train the language model on")
    if valid_corpus is None:
        train_lines, valid_lines = split_validation(corpus, train.valid_fraction)
    else:
        train_lines, valid_lines = list(corpus), list(valid_corpus)
    train_ids = encode_stream(train_lines, tokenizer)
    valid_ids = encode_stream(valid_lines, tokenizer) if valid_lines else None
    if valid_ids is not None and valid_ids.size < 2:
        log.warning("Validation stream too short, skipping validation", tokens=int(valid_ids.size))
        valid_ids = None
    return train_ids, valid_ids


def _fit_lm(
    learner: LanguageModelLearner,
    train_ids: np.ndarray,
    valid_ids: np.ndarray | None,
    epochs: int,
    lr_max: float,
    factor: float,
    dropout_mult: float,
    stage: str,
    metrics: MetricsLog,
) -> None:
    train = learner.train
    windows = bptt_batchify(train_ids, train.lm_batch, train.bptt)
    schedule = train.schedule(max(1, epochs * len(windows)), lr_max)
    dtype = learner.params[EMBEDDING].dtype
    step = 0
    lr, momentum = one_cycle_cosine(0, schedule)
    for epoch in range(1, epochs + 1):
        state = RecurrentState.zeros(learner.config, train.lm_batch, dtype=dtype)
        total, count = 0.0, 0
        for inputs, targets in windows:
            lr, momentum = one_cycle_cosine(step, schedule)
            loss, state = learner.step(inputs, targets, state, lr, momentum, dropout_mult, factor)
            total += loss * targets.size
            count += targets.size
            step += 1
        train_loss = total / count
        metrics.emit(stage=stage, epoch=epoch, step=learner.step_count, split="train", loss=train_loss,
                     perplexity=math.exp(train_loss), lr=lr, momentum=momentum)
        record = {"train_loss": round(train_loss, 4)}
        if valid_ids is not None:
            ev = evaluate_lm(learner.params, learner.config, valid_ids, train.lm_batch, train.bptt)
            metrics.emit(stage=stage, epoch=epoch, step=learner.step_count, split="valid", loss=ev.loss,
                         perplexity=ev.perplexity, lr=lr, momentum=momentum)
            record["valid_perplexity"] = round(ev.perplexity, 3)
        metrics.flush()
        log.info("Epoch finished", stage=stage, epoch=epoch, **record)


def pretrain_lm(
    corpus: Sequence[str],
    tokenizer: TokenizerModel,
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
    valid_corpus: Sequence[str] | None = None,
    metrics: MetricsLog | None = None,
    settings: dict[str, str] | None = None,
) -> TrainingResult:
    """First stage: language model from scratch, no dropout, single learning rate."""
    metrics = metrics or MetricsLog()
    _check_vocab(model_config, tokenizer)
    train_ids, valid_ids = _lm_streams(corpus, valid_corpus, tokenizer, train_config)
    log.info("Pretraining language model", tokens=int(train_ids.size), seed=seed,
             epochs=train_config.epochs_pretrain)
    learner = LanguageModelLearner(build_language_model(model_config, seed), model_config, train_config, seed)
    _fit_lm(learner, train_ids, valid_ids, train_config.epochs_pretrain, train_config.lr_pretrain, 1.0,
            train_config.dropout_pretrain, "lm-pretrain", metrics)
    checkpoint = Checkpoint("lm", model_config, learner.params, model_hash(tokenizer),
                            settings=dict(settings or {}), optimizer=learner.optimizer)
    return TrainingResult(checkpoint, metrics.records)


def finetune_lm(
    checkpoint: Checkpoint,
    corpus: Sequence[str],
    tokenizer: TokenizerModel,
    train_config: TrainConfig,
    seed: int,
    valid_corpus: Sequence[str] | None = None,
    metrics: MetricsLog | None = None,
    settings: dict[str, str] | None = None,
) -> TrainingResult:
    """Second stage: continue LM training on target text with dropout and discriminative rates."""
    metrics = metrics or MetricsLog()
    if checkpoint.kind != "lm":
        raise TransferError(f"expected a language model checkpoint, got {checkpoint.kind!r}", fields=["kind"])
    _check_compatible(checkpoint, tokenizer)
    train_ids, valid_ids = _lm_streams(corpus, valid_corpus, tokenizer, train_config)
    log.info("Fine-tuning language model", tokens=int(train_ids.size), seed=seed,
             epochs=train_config.epochs_finetune)
    config = checkpoint.model_config
    learner = LanguageModelLearner(checkpoint.params.clone(), config, train_config, seed)
    _fit_lm(learner, train_ids, valid_ids, train_config.epochs_finetune, train_config.lr_finetune,
            train_config.disc_factor, train_config.dropout_finetune, "lm-finetune", metrics)
    result = Checkpoint("lm", config, learner.params, model_hash(tokenizer),
                        settings=dict(settings or checkpoint.settings), optimizer=learner.optimizer)
    return TrainingResult(result, metrics.records)


def _classifier_start(
    checkpoint: Checkpoint | None,
    model_config: ModelConfig | None,
    tokenizer: TokenizerModel,
    n_classes: int,
    seed: int,
) -> tuple[Parameters, ModelConfig]:
    if checkpoint is None:
        if model_config is None:
            raise ConfigError("a model config is required when no language model checkpoint is given")
        _check_vocab(model_config, tokenizer)
        log.info("Classifier starts from a randomly initialized encoder", seed=seed)
        return build_classifier(model_config, n_classes, seed), model_config

    _check_compatible(checkpoint, tokenizer)
    config = checkpoint.model_config
    if model_config is not None and (differing := checkpoint.model_config.encoder_mismatch(model_config)):
        raise TransferError("requested model config differs from the checkpoint's encoder", fields=differing)
    params = build_classifier(config, n_classes, seed)
    return transfer_encoder(checkpoint.params, params, checkpoint.model_config, config), config


def finetune_classifier(
    checkpoint: Checkpoint | None,
    train: LabeledDataset,
    valid: LabeledDataset,
    tokenizer: TokenizerModel,
    train_config: TrainConfig,
    seed: int,
    model_config: ModelConfig | None = None,
    metrics: MetricsLog | None = None,
    settings: dict[str, str] | None = None,
    stage: str = "clf-train",
) -> TrainingResult:
    """Third stage: transfer the encoder into a classifier and train it.

    Without a checkpoint the encoder is randomly initialized. The returned
    parameters are those of the epoch with the best validation accuracy
    (earliest on ties).
    """
    metrics = metrics or MetricsLog()
    n_classes = train.n_classes
    if n_classes < 2:
        raise ConfigError(f"classification needs at least 2 classes, got {n_classes}")
    if valid.class_names != train.class_names:
        raise DataError(f"validation classes {valid.class_names} differ from training classes {train.class_names}")
    if len(train) < 2 or len(valid) < 1:
        raise DataError(f"need at least 2 training and 1 validation example, got {len(train)} and {len(valid)}")

    params, config = _classifier_start(checkpoint, model_config, tokenizer, n_classes, seed)
    tok_hash = model_hash(tokenizer)
    epochs = train_config.epochs_classifier
    if epochs == 0:
        log.info("Zero classifier epochs, returning the transferred model")
        cp = Checkpoint("classifier", config, params, tok_hash, list(train.class_names), dict(settings or {}))
        return TrainingResult(cp, metrics.records)

    train_encoded = encode_examples(train, tokenizer)
    valid_encoded = encode_examples(valid, tokenizer)
    learner = ClassifierLearner(params, config, train_config, seed)
    n_batches = len(pad_batches(train, tokenizer, train_config.clf_batch, min_batch=2, encoded=train_encoded))
    schedule = train_config.schedule(max(1, epochs * n_batches), train_config.lr_classifier)
    log.info("Fine-tuning classifier", examples=len(train), classes=n_classes, epochs=epochs,
             pretrained=checkpoint is not None)

    best_params, best_acc, best_epoch = params.clone(), -1.0, 0
    step = 0
    lr, momentum = one_cycle_cosine(0, schedule)
    for epoch in range(1, epochs + 1):
        order = np.random.default_rng([seed, epoch]).permutation(len(train))
        batches = pad_batches(train, tokenizer, train_config.clf_batch, order, min_batch=2, encoded=train_encoded)
        total, count = 0.0, 0
        for batch in batches:
            lr, momentum = one_cycle_cosine(step, schedule)
            loss = learner.step(batch, lr, momentum, train_config.dropout_classifier, train_config.disc_factor,
                                train_config.label_smoothing)
            total += loss * batch.size
            count += batch.size
            step += 1
        ev = evaluate_classifier(learner.params, config, valid, tokenizer, train_config.clf_batch, valid_encoded)
        metrics.emit(stage=stage, epoch=epoch, step=learner.step_count, split="train", loss=total / count,
                     lr=lr, momentum=momentum)
        metrics.emit(stage=stage, epoch=epoch, step=learner.step_count, split="valid", accuracy=ev.accuracy,
                     lr=lr, momentum=momentum)
        metrics.flush()
        if ev.accuracy > best_acc:
            best_params, best_acc, best_epoch = learner.params.clone(), ev.accuracy, epoch
        log.info("Epoch finished", stage=stage, epoch=epoch, train_loss=round(total / count, 4),
                 valid_accuracy=round(ev.accuracy, 4), best_epoch=best_epoch)

    optimizer = learner.optimizer if best_epoch == epochs else None
    cp = Checkpoint("classifier", config, best_params, tok_hash, list(train.class_names),
                    dict(settings or {}), optimizer)
    return TrainingResult(cp, metrics.records, best_acc, best_epoch)
