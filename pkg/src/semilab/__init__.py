"""Desk-scale semi-supervised learning laboratory.

Pure-numpy training stack for studying confidence-threshold pseudo-labeling
under batch-size and per-class threshold curricula, with exact forward/backward
pass accounting, plus federated and streaming simulators built on the same
engine.
"""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad, backward
from .nn import Model, SGDMomentum, ema_update, save_checkpoint, load_checkpoint
from .data import (
    Dataset,
    SslSplit,
    BatchCursor,
    load_cifar10_binary,
    synth_generate,
    make_ssl_split,
    save_dataset,
    load_dataset,
)
from .augment import AugmentPolicy, weak_augment, strong_augment
from .schedules import (
    ScheduleConfig,
    bexp,
    unlabeled_batch_size,
    mean_bexp_fraction,
    lambda_coeff,
    cosine_lr,
    CplState,
)
from .accounting import PassLedger
from .engine import TrainConfig, StepStats, fixmatch_step, train, evaluate

__all__ = [
    "Tensor",
    "no_grad",
    "backward",
    "Model",
    "SGDMomentum",
    "ema_update",
    "save_checkpoint",
    "load_checkpoint",
    "Dataset",
    "SslSplit",
    "BatchCursor",
    "load_cifar10_binary",
    "synth_generate",
    "make_ssl_split",
    "save_dataset",
    "load_dataset",
    "AugmentPolicy",
    "weak_augment",
    "strong_augment",
    "ScheduleConfig",
    "bexp",
    "unlabeled_batch_size",
    "mean_bexp_fraction",
    "lambda_coeff",
    "cosine_lr",
    "CplState",
    "PassLedger",
    "TrainConfig",
    "StepStats",
    "fixmatch_step",
    "train",
    "evaluate",
]
