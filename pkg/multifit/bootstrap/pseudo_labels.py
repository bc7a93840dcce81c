"""Pseudo-label bootstrapping: a teacher's predictions on unlabeled target
texts become hard training labels for the monolingual classifier."""
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from multifit.exception import DataError, IngestionError
from multifit.logger import GLOBAL_LOGGER as log
from multifit.network import ModelConfig
from multifit.tokenizer import TokenizerModel
from multifit.training import (
    Example,
    LabeledDataset,
    TrainConfig,
    TrainingResult,
    evaluate_classifier,
    finetune_classifier,
    split_validation,
)
from multifit.utils.checkpoint import Checkpoint
from multifit.utils.metrics import MetricsLog
from multifit.utils.text_io import read_utf8

MAX_LISTED_IDS = 10


@dataclass(frozen=True)
class PseudoLabel:
    id: str
    label: int
    confidence: float = 1.0


@dataclass
class PseudoLabelSet:
    records: list[PseudoLabel]
    n_classes: int
    source: str = "teacher"

    def __post_init__(self):
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise DataError(f"duplicate pseudo-label id {rec.id!r}")
            seen.add(rec.id)
            if not 0 <= rec.label < self.n_classes:
                raise DataError(f"pseudo label {rec.label} of {rec.id!r} outside [0, {self.n_classes})")
            if not 0.0 <= rec.confidence <= 1.0:
                raise DataError(f"confidence {rec.confidence} of {rec.id!r} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self) -> dict[str, PseudoLabel]:
        return {rec.id: rec for rec in self.records}


def ingest_teacher_predictions(path: str | Path, n_classes: int | None = None, source: str | None = None) -> PseudoLabelSet:
    """Read ``<example_id>\\t<class_id>[\\t<confidence>]`` lines; ``#`` lines are comments.

    Without ``n_classes`` the class count is inferred as max id + 1.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"teacher predictions not found: {path}")
    records: list[PseudoLabel] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(read_utf8(path).splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise IngestionError("expected '<example_id>\\t<class_id>[\\t<confidence>]'", line=lineno)
        ex_id = parts[0].strip()
        if not ex_id:
            raise IngestionError("empty example id", line=lineno)
        if ex_id in seen:
            raise IngestionError(f"duplicate example id {ex_id!r} (first seen on line {seen[ex_id]})", line=lineno)
        seen[ex_id] = lineno
        try:
            label = int(parts[1])
        except ValueError:
            raise IngestionError(f"class id {parts[1]!r} is not an integer", line=lineno)
        if label < 0 or (n_classes is not None and label >= n_classes):
            raise IngestionError(f"unknown class {label} for example {ex_id!r}", line=lineno)
        confidence = 1.0
        if len(parts) == 3:
            try:
                confidence = float(parts[2])
            except ValueError:
                raise IngestionError(f"confidence {parts[2]!r} is not a number", line=lineno)
            if not 0.0 <= confidence <= 1.0:
                raise IngestionError(f"confidence {confidence} outside [0, 1]", line=lineno)
        records.append(PseudoLabel(ex_id, label, confidence))

    k = n_classes if n_classes is not None else max(2, max((r.label for r in records), default=0) + 1)
    pseudo = PseudoLabelSet(records, k, source or path.stem)
    if records:
        conf = np.asarray([r.confidence for r in records])
        log.info("Teacher predictions ingested", path=str(path), records=len(records), classes=k,
                 confidence_mean=round(float(conf.mean()), 4), confidence_min=round(float(conf.min()), 4))
    else:
        log.warning("Teacher prediction file holds no records", path=str(path))
    return pseudo


def synthetic_teacher(gold: LabeledDataset, accuracy: float, seed: int, source: str = "synthetic") -> PseudoLabelSet:
    """Gold labels corrupted so that exactly round((1 - accuracy) * N) are wrong;
    wrong labels are drawn uniformly from the other classes."""
    if not 0.0 <= accuracy <= 1.0:
        raise DataError(f"teacher accuracy must be in [0, 1], got {accuracy}")
    k = gold.n_classes
    rng = np.random.default_rng(seed)
    labels = gold.labels.copy()
    n_wrong = int(round((1.0 - accuracy) * len(gold)))
    wrong = rng.permutation(len(gold))[:n_wrong]
    labels[wrong] = (labels[wrong] + rng.integers(1, k, size=n_wrong)) % k
    records = [PseudoLabel(ex.id, int(lbl)) for ex, lbl in zip(gold.examples, labels)]
    return PseudoLabelSet(records, k, source)


@dataclass
class BootstrapResult:
    training: TrainingResult
    student_accuracy: float | None = None
    teacher_accuracy: float | None = None
    n_train: int = 0
    n_valid: int = 0
    dropped_low_confidence: int = 0


def teacher_accuracy_on(gold: LabeledDataset, pseudo: PseudoLabelSet) -> float | None:
    """Fraction of gold examples (that the teacher labeled) where the pseudo label agrees."""
    by_id = pseudo.by_id()
    hits = [by_id[ex.id].label == ex.label for ex in gold.examples if ex.id in by_id]
    return float(np.mean(hits)) if hits else None


def bootstrap_train(
    lm_checkpoint: Checkpoint | None,
    texts: Mapping[str, str],
    pseudo: PseudoLabelSet,
    tokenizer: TokenizerModel,
    train_config: TrainConfig,
    seed: int,
    gold: LabeledDataset | None = None,
    class_names: list[str] | None = None,
    model_config: ModelConfig | None = None,
    valid_fraction: float = 0.1,
    confidence_threshold: float = 0.0,
    metrics: MetricsLog | None = None,
    settings: dict[str, str] | None = None,
) -> BootstrapResult:
    """Fine-tune a classifier on pseudo labels and score student and teacher on gold.

    The final ``valid_fraction`` of pseudo records (file order) select the
    best epoch. ``lm_checkpoint=None`` trains without pretraining.
    """
    if not pseudo.records:
        raise DataError("empty pseudo-label set: nothing to train on")
    unresolved = [rec.id for rec in pseudo.records if rec.id not in texts]
    if unresolved:
        listed = ", ".join(unresolved[:MAX_LISTED_IDS])
        more = f" (and {len(unresolved) - MAX_LISTED_IDS} more)" if len(unresolved) > MAX_LISTED_IDS else ""
        log.error("Pseudo labels without text", count=len(unresolved))
        raise DataError(f"{len(unresolved)} pseudo-label id(s) have no text: {listed}{more}")

    records = pseudo.records
    dropped = 0
    if confidence_threshold > 0.0:
        records = [r for r in records if r.confidence >= confidence_threshold]
        dropped = len(pseudo.records) - len(records)
        log.info("Confidence threshold applied", threshold=confidence_threshold, kept=len(records), dropped=dropped)
        if not records:
            raise DataError(f"no pseudo label reaches confidence {confidence_threshold}")

    names = list(class_names or (gold.class_names if gold is not None else [str(i) for i in range(pseudo.n_classes)]))
    if pseudo.n_classes > len(names):
        raise DataError(f"{len(names)} class names for {pseudo.n_classes} pseudo-label classes")
    examples = [Example(texts[r.id], r.label, r.id) for r in records]
    train_ex, valid_ex = split_validation(examples, valid_fraction)
    if not valid_ex:
        raise DataError(f"need at least 2 pseudo-labeled examples, got {len(examples)}")
    train = LabeledDataset(train_ex, names, "pseudo-train")
    valid = LabeledDataset(valid_ex, names, "pseudo-valid")

    training = finetune_classifier(lm_checkpoint, train, valid, tokenizer, train_config, seed,
                                   model_config=model_config, metrics=metrics, settings=settings, stage="bootstrap")
    result = BootstrapResult(training, n_train=len(train), n_valid=len(valid), dropped_low_confidence=dropped)
    if gold is not None:
        cp = training.checkpoint
        result.student_accuracy = evaluate_classifier(cp.params, cp.model_config, gold, tokenizer,
                                                      train_config.clf_batch).accuracy
        result.teacher_accuracy = teacher_accuracy_on(gold, pseudo)
        if result.teacher_accuracy is None:
            log.warning("No gold example carries a pseudo label, teacher accuracy unavailable")
    log.info("Bootstrapping finished", source=pseudo.source, train=len(train), valid=len(valid),
             student_accuracy=result.student_accuracy, teacher_accuracy=result.teacher_accuracy)
    return result
