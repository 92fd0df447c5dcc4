"""Learned EMD approximators: minimal autodiff, the two models, training."""

from .autodiff import Tensor, parameter
from .models import (
    DeepEmdConfig,
    DeepEmdModel,
    MlpConfig,
    MlpModel,
    estimate_distance,
    predict_matching,
    surrogate_gradient,
)
from .training import (
    AdamState,
    Batch,
    BatchingError,
    EpochLog,
    TrainConfig,
    TrainResult,
    adam_init,
    adam_step,
    assemble_batch,
    load_checkpoint,
    mlp_input_gradient,
    save_checkpoint,
    train,
)

__all__ = [
    "Tensor",
    "parameter",
    "MlpConfig",
    "MlpModel",
    "DeepEmdConfig",
    "DeepEmdModel",
    "predict_matching",
    "estimate_distance",
    "surrogate_gradient",
    "AdamState",
    "adam_init",
    "adam_step",
    "TrainConfig",
    "TrainResult",
    "EpochLog",
    "Batch",
    "BatchingError",
    "assemble_batch",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "mlp_input_gradient",
]
