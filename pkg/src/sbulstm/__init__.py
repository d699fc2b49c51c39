"""Stacked bidirectional/unidirectional LSTM network for multi-location speed prediction."""

from .data import (
    NormStats,
    SampleSet,
    SpeedSeries,
    SynthParams,
    inject_missing,
    load_csv,
    save_csv,
    split_shuffle,
    synth_generate,
    window,
)
from .estimator import SBULSTMRegressor, WindowScaler
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    ParseError,
    PredictionUndefinedError,
    ShapeError,
    TrainingDivergedError,
    UndefinedMetricError,
)
from .metrics import evaluate, mae, mape, persistence_baseline
from .model import LayerSpec, Model, ModelSpec, build_model, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigurationError", "LayerSpec", "Model", "ModelSpec", "NormStats",
    "ParseError", "PredictionUndefinedError", "SBULSTMRegressor", "SampleSet", "ShapeError",
    "SpeedSeries", "SynthParams", "TrainConfig", "TrainingDivergedError", "UndefinedMetricError",
    "WindowScaler", "build_model", "evaluate", "inject_missing", "load_checkpoint", "load_csv",
    "mae", "mape", "persistence_baseline", "save_checkpoint", "save_csv", "split_shuffle",
    "synth_generate", "train", "window",
]
