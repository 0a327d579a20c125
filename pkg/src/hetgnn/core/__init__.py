"""Dense arrays, segment kernels and a small reverse-mode autodiff."""

from hetgnn.core.ops import (
    DimensionError,
    activation,
    add,
    concat_last,
    dropout,
    gather_rows,
    layer_norm,
    linear,
    mul,
    reduce_mean,
    reduce_sum,
    segment_reduce,
    segment_softmax,
)
from hetgnn.core.optim import AdamState, adam_step, cosine_decay_lr
from hetgnn.core.tape import Parameters, Tape, TapeError, Var, backward, value_of

__all__ = [
    "AdamState", "DimensionError", "Parameters", "Tape", "TapeError", "Var",
    "activation", "adam_step", "add", "backward", "concat_last", "cosine_decay_lr",
    "dropout", "gather_rows", "layer_norm", "linear", "mul", "reduce_mean",
    "reduce_sum", "segment_reduce", "segment_softmax", "value_of",
]
