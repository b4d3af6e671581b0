"""Small deterministic sequence-learning engine (float64 numpy)."""

from .checkpoint import load_checkpoint, save_checkpoint
from .graph import LayerSpec, ModelGraph, sigmoid
from .losses import CompositeLossSpec, LossTerms, loss
from .optim import Adam, adam_step
from .training import (
    History,
    TrainConfig,
    activations,
    batch_loss_and_grads,
    evaluate_loss,
    gradient_check,
    predict,
    predict_classes,
    train,
)

__all__ = [
    "Adam",
    "CompositeLossSpec",
    "History",
    "LayerSpec",
    "LossTerms",
    "ModelGraph",
    "TrainConfig",
    "activations",
    "adam_step",
    "batch_loss_and_grads",
    "evaluate_loss",
    "gradient_check",
    "load_checkpoint",
    "loss",
    "predict",
    "predict_classes",
    "save_checkpoint",
    "sigmoid",
    "train",
]
