"""Audio-visual sound event localization and detection on a numpy autodiff engine."""

from .augment import ALL_TRANSFORMS, IDENTITY, AvcsTransform
from .features import FoaClip, StftConfig, extract_features
from .labels import Event, EventLabelSet, adpit_loss, decode_predictions, encode_targets
from .metrics import MetricsReport, evaluate, seld_score
from .model import ModelConfig, SeldModel
from .synth import EventSpec, ScenarioSpec, generate_scene

__all__ = [
    "ALL_TRANSFORMS", "IDENTITY", "AvcsTransform", "FoaClip", "StftConfig", "extract_features",
    "Event", "EventLabelSet", "adpit_loss", "decode_predictions", "encode_targets",
    "MetricsReport", "evaluate", "seld_score", "ModelConfig", "SeldModel",
    "EventSpec", "ScenarioSpec", "generate_scene",
]
