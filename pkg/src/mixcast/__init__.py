"""mixcast: time-series forecasting with a layer-tapped transformer backbone
and local/global feature mixers."""

from .config import ExperimentConfig, load_config
from .data import SeriesDataset, load_csv
from .estimator import MixerForecaster
from .model import ForecastModel, ModelConfig, build_model, load_model, save_model
from .protocols import RunReport, ablation_sweep, run_protocol
from .training import Metrics, TrainConfig, evaluate, persistence_baseline, train

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "ForecastModel",
    "Metrics",
    "MixerForecaster",
    "ModelConfig",
    "RunReport",
    "SeriesDataset",
    "TrainConfig",
    "ablation_sweep",
    "build_model",
    "evaluate",
    "load_config",
    "load_csv",
    "load_model",
    "persistence_baseline",
    "run_protocol",
    "save_model",
    "train",
]
