"""Mixed-channels transformer for multivariate time-series forecasting."""

from .data import Dataset, SplitSpec, WindowSample, WindowSet, load_csv, synth_generate
from .model import LinearBaseline, LinearConfig, MCformer, ModelConfig
from .training import ForecastReport, TrainConfig, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ForecastReport", "LinearBaseline", "LinearConfig", "MCformer",
    "ModelConfig", "SplitSpec", "TrainConfig", "WindowSample", "WindowSet",
    "evaluate", "fit", "load_csv", "synth_generate",
]
