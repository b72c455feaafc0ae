"""Smartwatch social-distancing alerts with a numpy Vision Transformer."""

__version__ = "0.1.0"

from .dataset import LabelTaxonomy, Segment, SensorSample, is_alert_class, segment, synth_generate
from .model import ModelConfig, ViTModel, count_flops, count_params, preset
from .training import TrainConfig, train

__all__ = [
    "LabelTaxonomy",
    "ModelConfig",
    "Segment",
    "SensorSample",
    "TrainConfig",
    "ViTModel",
    "count_flops",
    "count_params",
    "is_alert_class",
    "preset",
    "segment",
    "synth_generate",
    "train",
]
