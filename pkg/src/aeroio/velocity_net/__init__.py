"""Windowed velocity network: model, losses, training, windows and I/O."""
from .estimator import NetVelocityPredictor, RotorNormalizer, VelocityRegressor
from .losses import huber_loss, nll_loss
from .model import NetConfig, backward, forward, init_params
from .training import TrainConfig, train
from .windows import RunningStats, make_windows, normalize_window

__all__ = [
    "NetConfig", "NetVelocityPredictor", "RotorNormalizer", "RunningStats", "TrainConfig", "VelocityRegressor",
    "backward", "forward", "huber_loss", "init_params", "make_windows", "nll_loss", "normalize_window", "train",
]
