from multifit.numerics.tensor import (
    Tape,
    TapeRecord,
    Tensor,
    active_tape,
    backward,
    default_dtype,
    no_record,
    precision,
    record,
)
from multifit.numerics.ops import activation, causal_conv_over_time, matmul
from multifit.numerics.optim import OptimizerState, adam_step, clip_grad_norm
from multifit.numerics.gradcheck import GradCheckEntry, GradCheckReport, check_gradients
