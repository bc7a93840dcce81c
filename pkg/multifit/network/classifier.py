"""Classifier head on top of the shared encoder: concat pooling, then
linear -> batch-norm -> ReLU -> dropout -> linear."""
import numpy as np

from multifit.exception import ConfigError, ContractError, TransferError
from multifit.logger import GLOBAL_LOGGER as log
from multifit.numerics import Tensor, record
from multifit.numerics import ops
from multifit.network.config import ModelConfig
from multifit.network.language_model import EMBEDDING, RecurrentState, encoder_forward, init_encoder
from multifit.network.parameters import Parameters

HEAD_IN_WEIGHT = "head.0.weight"
HEAD_IN_BIAS = "head.0.bias"
BN_GAMMA = "head.bn.gamma"
BN_BETA = "head.bn.beta"
BN_RUNNING_MEAN = "head.bn.running_mean"
BN_RUNNING_VAR = "head.bn.running_var"
HEAD_OUT_WEIGHT = "head.1.weight"
HEAD_OUT_BIAS = "head.1.bias"
BN_EPS = 1e-5

ENCODER_PREFIXES = ("embedding.", "encoder.")


def _init_head(params: Parameters, config: ModelConfig, n_classes: int, rng: np.random.Generator) -> None:
    pooled = 3 * config.emb_dim
    bound = 1.0 / np.sqrt(pooled)
    params.add(HEAD_IN_WEIGHT, rng.uniform(-bound, bound, (pooled, config.head_hidden)))
    params.add(HEAD_IN_BIAS, np.zeros(config.head_hidden))
    params.add(BN_GAMMA, np.ones(config.head_hidden))
    params.add(BN_BETA, np.zeros(config.head_hidden))
    params.add(BN_RUNNING_MEAN, np.zeros(config.head_hidden), buffer=True)
    params.add(BN_RUNNING_VAR, np.ones(config.head_hidden), buffer=True)
    bound = 1.0 / np.sqrt(config.head_hidden)
    params.add(HEAD_OUT_WEIGHT, rng.uniform(-bound, bound, (config.head_hidden, n_classes)))
    params.add(HEAD_OUT_BIAS, np.zeros(n_classes))


def build_classifier(config: ModelConfig, n_classes: int, seed: int) -> Parameters:
    """Encoder (randomly initialized) plus a fresh two-layer head for ``n_classes``."""
    if n_classes < 2:
        raise ConfigError(f"a classifier needs at least 2 classes, got {n_classes}")
    rng = np.random.default_rng(seed)
    params = Parameters()
    init_encoder(params, config, rng)
    _init_head(params, config, n_classes, rng)
    return params


def n_classes_of(params: Parameters) -> int:
    return params[HEAD_OUT_BIAS].shape[0]


def concat_pool(h: Tensor, lengths: np.ndarray) -> Tensor:
    """[h at the last valid step ; mean over valid steps ; max over valid steps]."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if h.data.ndim != 3 or lengths.shape != (h.shape[1],):
        raise ContractError(f"concat_pool needs h [T, B, H] and B lengths, got {h.shape} and {lengths.shape}")
    T, B, H = h.shape
    if np.any(lengths < 1):
        raise ContractError(f"zero-length example at batch position {int(np.argmin(lengths))}")
    if np.any(lengths > T):
        raise ContractError(f"example length {int(lengths.max())} exceeds sequence length {T}")

    valid = (np.arange(T)[:, None] < lengths[None, :])[..., None]  # [T, B, 1]
    cols = np.arange(B)
    last = h.data[lengths - 1, cols]
    avg = (h.data * valid).sum(axis=0) / lengths[:, None].astype(h.dtype)
    masked = np.where(valid, h.data, -np.inf)
    arg = masked.argmax(axis=0)  # [B, H]
    peak = np.take_along_axis(h.data, arg[None], axis=0)[0]
    out = np.concatenate([last, avg, peak], axis=1)

    def _backward(g):
        g_last, g_avg, g_max = g[:, :H], g[:, H:2 * H], g[:, 2 * H:]
        gh = np.zeros_like(h.data)
        gh[lengths - 1, cols] += g_last
        gh += valid * (g_avg / lengths[:, None].astype(h.dtype))[None]
        rows, chans = np.meshgrid(cols, np.arange(H), indexing="ij")
        np.add.at(gh, (arg, rows, chans), g_max)
        return (gh,)

    return record("concat_pool", (h,), out, _backward)


def _batch_norm(x: Tensor, params: Parameters, config: ModelConfig, training: bool) -> Tensor:
    gamma, beta = params[BN_GAMMA], params[BN_BETA]
    running_mean, running_var = params[BN_RUNNING_MEAN], params[BN_RUNNING_VAR]
    if training:
        if x.shape[0] < 2:
            raise ContractError("batch-norm in training mode needs a batch of at least 2 examples")
        mu = ops.mean(x, axis=0, keepdims=True)
        centered = ops.sub(x, mu)
        var = ops.mean(ops.mul(centered, centered), axis=0, keepdims=True)
        normed = ops.mul(centered, ops.power(ops.add(var, BN_EPS), -0.5))
        m = config.bn_momentum
        n = x.shape[0]
        # running variance tracks the unbiased estimate
        running_mean.data[...] = (1 - m) * running_mean.data + m * mu.data[0]
        running_var.data[...] = (1 - m) * running_var.data + m * var.data[0] * n / (n - 1)
    else:
        scale = 1.0 / np.sqrt(running_var.data + BN_EPS)
        normed = ops.mul(ops.sub(x, running_mean.data), scale.astype(x.dtype))
    return ops.add(ops.mul(normed, gamma), beta)


def classifier_forward(
    pooled: Tensor,
    params: Parameters,
    config: ModelConfig,
    training: bool = False,
    dropout_mult: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """pooled [B, 3E] -> unnormalized logits [B, K]."""
    w_in = params[HEAD_IN_WEIGHT]
    if pooled.data.ndim != 2 or pooled.shape[1] != w_in.shape[0]:
        raise ConfigError(f"pooled features {pooled.shape} do not fit head input {w_in.shape}")
    x = ops.linear(pooled, w_in, params[HEAD_IN_BIAS])
    x = _batch_norm(x, params, config, training)
    x = ops.relu(x)
    if training and dropout_mult > 0.0 and (p := config.dropout.rate("output", dropout_mult)) > 0:
        if rng is None:
            raise ContractError("training with dropout needs a random generator")
        keep = (rng.random(x.shape) >= p) / (1.0 - p)
        x = ops.mul(x, keep.astype(x.dtype))
    return ops.linear(x, params[HEAD_OUT_WEIGHT], params[HEAD_OUT_BIAS])


def classifier_logits(
    params: Parameters,
    ids: np.ndarray,
    lengths: np.ndarray,
    config: ModelConfig,
    training: bool = False,
    dropout_mult: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Padded ids [T, B] with valid ``lengths`` -> logits [B, K]."""
    ids = np.asarray(ids)
    state = RecurrentState.zeros(config, ids.shape[1], dtype=params[EMBEDDING].dtype)
    h, _ = encoder_forward(params, ids, state, config, training, dropout_mult, rng)
    return classifier_forward(concat_pool(h, lengths), params, config, training, dropout_mult, rng)


def transfer_encoder(
    lm_params: Parameters,
    clf_params: Parameters,
    lm_config: ModelConfig,
    clf_config: ModelConfig,
) -> Parameters:
    """Copy embedding and recurrent weights from a language model into a classifier.

    The head is left as initialized. Values are copied, so later training of
    the classifier does not touch the language model.
    """
    differing = lm_config.encoder_mismatch(clf_config)
    if differing:
        log.error("Encoder configuration mismatch", fields=differing)
        raise TransferError("language model and classifier encoders differ", fields=differing)
    source = lm_params.stored()
    copied = 0
    for name, tensor in clf_params.stored().items():
        if not name.startswith(ENCODER_PREFIXES):
            continue
        if name not in source or source[name].shape != tensor.shape:
            raise TransferError(f"encoder tensor {name!r} missing or misshapen in the language model", fields=[name])
        np.copyto(tensor.data, source[name].data.astype(tensor.dtype))
        copied += 1
    log.info("Transferred encoder weights", tensors=copied)
    return clf_params
