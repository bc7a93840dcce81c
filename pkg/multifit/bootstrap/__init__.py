from multifit.bootstrap.pseudo_labels import (
    BootstrapResult,
    PseudoLabel,
    PseudoLabelSet,
    bootstrap_train,
    ingest_teacher_predictions,
    synthetic_teacher,
    teacher_accuracy_on,
)
from multifit.bootstrap.noise import NoiseSpec, noise_robustness_run, perturb_labels, plot_noise_table
