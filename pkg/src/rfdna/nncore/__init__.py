"""Minimal network kernel: layer graphs, losses, training, gradient checks, model files."""

from .graph import Graph, GraphBuilder, GraphShapeError, LayerSpec, forward, deconv_padding
from .losses import bce, cce_from_logits, loss_cce, loss_mse, onehot
from .train import TrainConfig, TrainingDivergedError, fit, make_optimizer, minibatches, snapshot
from .gradcheck import GradCheckReport, gradient_check
from .serialize import (ModelFormatError, ModelVersionError, load_model, load_model_with_info,
                        model_bytes, parse_model, save_model)

__all__ = [
    "Graph", "GraphBuilder", "GraphShapeError", "LayerSpec", "forward", "deconv_padding",
    "bce", "cce_from_logits", "loss_cce", "loss_mse", "onehot",
    "TrainConfig", "TrainingDivergedError", "fit", "make_optimizer", "minibatches", "snapshot",
    "GradCheckReport", "gradient_check",
    "ModelFormatError", "ModelVersionError", "load_model", "load_model_with_info",
    "model_bytes", "parse_model", "save_model",
]
