"""Bias correction of numerical air-quality forecasts.

A cascaded recurrent network predicts the pollutant from lagged observations
and raw model forecasts, gradient-boosted trees prune uninformative inputs, and
a dense network corrects the remaining error from meteorology.
"""
from .baselines import PRESETS, AnalogDatabase, analog_adjust, analog_distance, persistence_forecast
from .boosting import GBTConfig, GBTModel, feature_importance, fit_gbt, predict_gbt, prune_features
from .bundle import load_bundle, save_bundle
from .corrector import DenseConfig, DenseNet, apply_correction, train_corrector
from .data import (
    BiasSpec,
    ScalerParams,
    SplitSpec,
    StationTable,
    build_temporal_windows,
    build_weather_matrix,
    chronological_split,
    generate_synthetic,
    impute_missing,
    load_station_csv,
    load_stations,
)
from .evaluation import MetricsReport, accuracy_improvement, euclidean_loss, evaluate, mae, r_squared, rmse
from .model import FitSettings, FittedModel, fit_preset, prepare_cell, run_preset
from .optim import TrainingConfig
from .pipeline import ExperimentConfig, horizon_sweep, parse_config, run_comparison, run_experiment
from .recurrent import CascadeConfig, CascadeNet, bptt_gradients, train_recurrent

__version__ = "0.1.0"
