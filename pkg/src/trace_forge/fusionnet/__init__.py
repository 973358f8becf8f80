"""Multi-view trace regression network, training and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .inputs import CHANNELS, MODALITIES, ChannelStats, build_input, fit_channel_stats
from .model import FUSIONS, SIZES, EncoderSpec, FusionModel, build_model, forward, view_max
from .train import History, TrainConfig, backward, loss_value, predict_trace, prepare, train

__all__ = [
    "CHANNELS",
    "ChannelStats",
    "EncoderSpec",
    "FUSIONS",
    "FusionModel",
    "History",
    "MODALITIES",
    "SIZES",
    "TrainConfig",
    "backward",
    "build_input",
    "build_model",
    "fit_channel_stats",
    "forward",
    "load_checkpoint",
    "loss_value",
    "predict_trace",
    "prepare",
    "save_checkpoint",
    "train",
    "view_max",
]
