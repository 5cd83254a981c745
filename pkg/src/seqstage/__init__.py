"""Sequence-to-sequence sleep staging with a hierarchical recurrent network.

A learnable constrained filterbank over log-power spectrograms feeds an
attention-pooled bidirectional GRU per epoch; a second bidirectional GRU
models the epoch sequence and emits one stage posterior per epoch. Training
is end to end on overlapping windows; prediction fuses the overlapping
posteriors per epoch in the log domain.
"""

from .autodiff import (AdamState, NumericalError, ParameterStore, ShapeError, Tape, Tensor,
                       adam_step, dropout, grad_check)
from .model import ModelConfig, ModelParams, NUM_STAGES, STAGES, forward, init_model_params, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ModelConfig", "ModelParams", "NumericalError", "NUM_STAGES",
    "ParameterStore", "STAGES", "ShapeError", "Tape", "Tensor", "adam_step",
    "dropout", "forward", "grad_check", "init_model_params", "train", "__version__",
]
