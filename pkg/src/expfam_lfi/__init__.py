"""Likelihood-free inference with score-matched neural exponential families."""

from .expfam import NeuralExpFam, build_model, fit_scaler
from .nets import (
    BatchNormLayer,
    DerivBundle,
    FeedForwardNet,
    PenNet,
    block_switch,
    fc_forward_derivs,
    pen_forward_derivs,
)
from .objectives import sm_objective, ssm_objective
from .simulators import get_model, reference_posterior
from .tape import softplus_derivs
from .training import TrainConfig, TrainingSet, train_expfam

__all__ = [
    "NeuralExpFam", "build_model", "fit_scaler",
    "BatchNormLayer", "DerivBundle", "FeedForwardNet", "PenNet",
    "block_switch", "fc_forward_derivs", "pen_forward_derivs",
    "sm_objective", "ssm_objective",
    "get_model", "reference_posterior",
    "softplus_derivs",
    "TrainConfig", "TrainingSet", "train_expfam",
]

__version__ = "0.1.0"
