from multifit.training.config import ScheduleConfig, TrainConfig
from multifit.training.schedule import discriminative_lr_groups, one_cycle_cosine
from multifit.training.losses import cross_entropy, label_smoothed_loss
from multifit.training.data import (
    BpttWindows,
    Example,
    LabeledDataset,
    PaddedBatch,
    bptt_batchify,
    encode_stream,
    pad_batches,
    read_corpus,
    read_labeled_tsv,
    read_unlabeled_tsv,
    split_validation,
)
from multifit.training.learner import (
    ClassifierLearner,
    LanguageModelLearner,
    evaluate_classifier,
    evaluate_lm,
    layer_groups,
)
from multifit.training.stages import TrainingResult, finetune_classifier, finetune_lm, pretrain_lm
