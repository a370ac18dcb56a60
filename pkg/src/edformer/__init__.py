"""Seasonal/trend decomposed transformer forecasting over variate tokens."""
from .decompose import DecomposedSeries, replicate_pad, series_decompose
from .engine import Adam, Tape, Tensor, backward, tensor
from .estimator import EDformerForecaster
from .model import EDformer, ModelConfig, denormalize, instance_normalize
from .train import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Adam", "DecomposedSeries", "EDformer", "EDformerForecaster", "ModelConfig", "Tape",
    "Tensor", "TrainConfig", "backward", "denormalize", "evaluate", "instance_normalize",
    "load_checkpoint", "replicate_pad", "save_checkpoint", "series_decompose", "tensor",
    "train",
]
