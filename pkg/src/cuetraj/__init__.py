"""Promptable human-trajectory prediction from heterogeneous visual cues.

Agents contribute any subset of trajectory, 3-D/2-D pose and 3-D/2-D box
cues; a per-agent cross-modality encoder fuses them with latent future
queries and a social encoder mixes agents before a small head decodes the
primary agent's future positions.
"""

from .datagen import ScenarioSpec, generate, oracle_predict
from .errors import (
    ConfigError, ContractError, CuetrajError, DimensionError, GenerationError, TrainingError,
    ValidationError,
)
from .masking import EvalPattern, MaskPolicy
from .metrics import MetricReport, ade, aswaee, fde
from .model import ModelConfig, ModelParams, forward, load_model, predict, save_model
from .scene import Agent, CueKind, CueTensor, PredictionY, Scene, read_corpus, write_corpus
from .training import RunLog, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Agent", "ConfigError", "ContractError", "CueKind", "CueTensor", "CuetrajError",
    "DimensionError", "EvalPattern", "GenerationError", "MaskPolicy", "MetricReport",
    "ModelConfig", "ModelParams", "PredictionY", "RunLog", "ScenarioSpec", "Scene",
    "TrainConfig", "TrainingError", "ValidationError", "ade", "aswaee", "evaluate", "fde",
    "forward", "generate", "load_model", "oracle_predict", "predict", "read_corpus",
    "save_model", "train", "write_corpus",
]
