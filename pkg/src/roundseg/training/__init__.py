from .losses import LossWeights, compute_losses
from .data import RoundSample, load_round_samples, batches_for_epoch
from .main_loop import TrainConfig, train_main
from .jcm import JcmSample, collect_jcm_samples, train_judgment, train_correction, model_digest

__all__ = [
    "LossWeights",
    "compute_losses",
    "RoundSample",
    "load_round_samples",
    "batches_for_epoch",
    "TrainConfig",
    "train_main",
    "JcmSample",
    "collect_jcm_samples",
    "train_judgment",
    "train_correction",
    "model_digest",
]
