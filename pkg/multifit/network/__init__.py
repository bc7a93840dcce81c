from multifit.network.config import DropoutProfile, ModelConfig
from multifit.network.parameters import Parameters
from multifit.network.qrnn import fo_pool, fo_recurrence, qrnn_layer_forward
from multifit.network.lstm import lstm_cell_forward
from multifit.network.language_model import (
    DECODER_BIAS,
    DECODER_WEIGHT,
    EMBEDDING,
    RecurrentState,
    build_language_model,
    encoder_forward,
    lm_forward,
)
from multifit.network.classifier import (
    build_classifier,
    classifier_forward,
    classifier_logits,
    concat_pool,
    n_classes_of,
    transfer_encoder,
)
