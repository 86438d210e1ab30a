from .tensor import GraphError, Tensor
from .ops import (
    BatchNormState,
    batch_norm,
    conv2d,
    cross_entropy,
    dense,
    dropout,
    global_average_pool,
    record_kinks,
    relu,
    softmax,
    stride2_pool,
)
from .optim import Adam, AdamState, PlateauSchedule, adam_update, plateau_step
from . import checkpoint

__all__ = [
    "Adam", "AdamState", "BatchNormState", "GraphError", "PlateauSchedule", "Tensor",
    "adam_update", "batch_norm", "checkpoint", "conv2d", "cross_entropy", "dense",
    "dropout", "global_average_pool", "plateau_step", "record_kinks", "relu",
    "softmax", "stride2_pool",
]
