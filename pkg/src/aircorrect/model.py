"""Fitting one model variant for one (station, pollutant, horizon) cell.

A cell is prepared once (windows, weather matrix, chronological split) and
every preset is fitted on that same preparation so that comparisons share
splits and seeds.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines
from .boosting import GBTConfig, GBTModel, ImportanceReport, feature_importance, fit_gbt, prune_features
from .corrector import Corrector, DenseConfig, DenseNet, apply_correction, train_corrector
from .data import (
    SplitSpec,
    StationTable,
    WeatherMatrix,
    WindowedDataset,
    build_temporal_windows,
    build_weather_matrix,
    chronological_split,
    cmaq_column,
)
from .errors import ConfigError, ConsistencyError
from .evaluation import MetricsReport, evaluate
from .optim import TrainingConfig, fit_minibatch
from .recurrent import CascadeConfig, CascadeNet, train_recurrent

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitSettings:
    split: SplitSpec = SplitSpec()
    training: TrainingConfig = TrainingConfig()
    cascade: CascadeConfig = CascadeConfig(dtype="float32")
    dense: DenseConfig = DenseConfig(dtype="float32")
    gbt: GBTConfig = GBTConfig()
    prune_threshold: float | None = None
    importance_metric: str = "count"
    validation_fraction: float = 0.1
    include_calendar: bool = False
    holidays: tuple = ()
    aux_pollutants: bool = False
    extra_lag_pollutants: tuple = ()
    n_noise_features: int = 0
    # lstm_dnn always uses the unpruned weather pattern
    corrector_uses_pruned_weather: bool = True
    # None follows the preset; False switches importance pruning off
    pruning: bool | None = None
    seed: int = 0

    def training_for(self, offset: int = 0) -> TrainingConfig:
        return replace(self.training, seed=self.seed + offset)


@dataclass
class CellData:
    table: StationTable
    pollutant: str
    horizon: int
    dataset: WindowedDataset
    weather: WeatherMatrix
    scalers: dict
    n_train: int

    @property
    def target_scaler(self):
        return self.scalers["target"]

    def part(self, which: str):
        sl = slice(0, self.n_train) if which == "train" else slice(self.n_train, len(self.dataset))
        return self.dataset.take(sl), self.weather.take(sl)

    def observed(self, which: str) -> np.ndarray:
        ds, _ = self.part(which)
        return np.asarray(self.table[self.pollutant])[ds.rows]

    def forecast_triples(self, which: str) -> np.ndarray:
        ds, _ = self.part(which)
        return np.column_stack([
            np.asarray(self.table[cmaq_column(self.pollutant, lead)])[ds.rows] for lead in (24, 48, 72)
        ])


def prepare_cell(table: StationTable, pollutant: str, horizon: int, settings: FitSettings,
                 min_target_row: int = 0) -> CellData:
    ds, scalers = build_temporal_windows(
        table, pollutant, horizon, split=settings.split,
        extra_lag_pollutants=settings.extra_lag_pollutants,
        n_noise_features=settings.n_noise_features, noise_seed=settings.seed,
        min_target_row=min_target_row,
    )
    wm = build_weather_matrix(
        table, ds, include_calendar=settings.include_calendar, holidays=settings.holidays,
        aux_pollutants=settings.aux_pollutants, split=settings.split,
    )
    train, _ = chronological_split(ds, settings.split)
    return CellData(table, pollutant, horizon, ds, wm, scalers, len(train))


@dataclass
class FittedModel:
    """Everything needed to map a cell's feature matrices to physical predictions."""

    preset: str
    station_id: str
    pollutant: str
    horizon: int
    temporal_names: tuple
    weather_names: tuple
    temporal_keep: list
    weather_keep: list
    target_scaler: object
    predictor: object
    corrector: Corrector | None = None
    gbt_temporal: GBTModel | None = None
    gbt_weather: GBTModel | None = None
    scalers: dict = field(default_factory=dict)
    weather_scalers: dict = field(default_factory=dict)
    settings_echo: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    @property
    def wiring(self) -> baselines.PresetWiring:
        return baselines.comparison_preset(self.preset)

    def importance(self, which: str, metric: str = "count") -> ImportanceReport | None:
        gbt = self.gbt_temporal if which == "temporal" else self.gbt_weather
        return None if gbt is None else feature_importance(gbt, metric)

    def _check(self, temporal, weather):
        temporal = np.asarray(getattr(temporal, "inputs", temporal), dtype=float)
        weather = np.asarray(getattr(weather, "values", weather), dtype=float)
        if temporal.shape[1] != len(self.temporal_names) or weather.shape[1] != len(self.weather_names):
            raise ConsistencyError("feature matrices do not match the fitted model's layout")
        if len(temporal) != len(weather):
            raise ConsistencyError("temporal and weather rows differ")
        return temporal, weather

    def predict_components(self, temporal, weather):
        """``(predictor_scaled, final_scaled, physical, n_clamped)`` for aligned rows."""
        temporal, weather = self._check(temporal, weather)
        xt = temporal[:, self.temporal_keep]
        xw = weather[:, self.weather_keep]
        if self.wiring.predictor == "dense":
            base = self.predictor.predict(np.hstack([xt, xw]))
        else:
            base = self.predictor.predict(xt)
        corr = self.corrector if self.corrector is not None else Corrector(None, None)
        cw = xw if self.settings_echo.get("corrector_uses_pruned_weather", True) else weather
        res = apply_correction(base, cw, corr, self.target_scaler)
        return base, res.scaled, res.values, res.n_clamped

    def predict(self, temporal, weather) -> np.ndarray:
        return self.predict_components(temporal, weather)[2]


def _importance_keep(X, y, names, settings: FitSettings):
    gbt = fit_gbt(X, y, settings.gbt, feature_names=names)
    report = feature_importance(gbt, settings.importance_metric)
    keep, _ = prune_features(report, None, settings.prune_threshold)
    return gbt, keep


def _fit_validation_split(n: int, fraction: float) -> int:
    n_val = int(math.floor(fraction * n))
    if n - n_val < 1:
        n_val = 0
    return n - n_val


def fit_preset(cell: CellData, preset: str, settings: FitSettings = FitSettings()) -> FittedModel:
    """Fit a learned preset (ptc, gru_xgb, lstm_dnn, dnn_xgb) on the cell's training part."""
    wiring = baselines.comparison_preset(preset)
    if not wiring.learned:
        raise ConfigError(f"preset {preset!r} has nothing to fit")
    train_ds, train_wm = cell.part("train")
    t_names, w_names = cell.dataset.feature_names, cell.weather.feature_names
    Xt, Xw, y = train_ds.inputs, train_wm.values, train_ds.targets
    gbt_t = gbt_w = None
    t_keep, w_keep = list(range(len(t_names))), list(range(len(w_names)))

    pruning = wiring.pruning if settings.pruning is None else (settings.pruning and wiring.pruning)
    if pruning and wiring.predictor == "dense":
        gbt_t, keep = _importance_keep(np.hstack([Xt, Xw]), y, t_names + w_names, settings)
        t_keep = [k for k in keep if k < len(t_names)]
        w_keep = [k - len(t_names) for k in keep if k >= len(t_names)]
    elif pruning:
        gbt_t, t_keep = _importance_keep(Xt, y, t_names, settings)
        if len(w_names):
            gbt_w, w_keep = _importance_keep(Xw, y, w_names, settings)

    n_fit = _fit_validation_split(len(y), settings.validation_fraction)
    fit_sl, val_sl = slice(0, n_fit), slice(n_fit, len(y))
    history = {}
    if wiring.predictor == "dense":
        X = np.hstack([Xt[:, t_keep], Xw[:, w_keep]])
        names = [t_names[k] for k in t_keep] + [w_names[k] for k in w_keep]
        net = DenseNet(replace(settings.dense, output="linear"), X.shape[1], seed=settings.seed,
                       feature_names=names)
        history["predictor"] = fit_minibatch(net, X[fit_sl], y[fit_sl], X[val_sl], y[val_sl],
                                             settings.training_for(0))
        predictor = net
        base_train = net.predict(X)
    else:
        cfg = replace(settings.cascade, cell=wiring.predictor)
        X = Xt[:, t_keep]
        net = CascadeNet(cfg, X.shape[1], seed=settings.seed, feature_names=[t_names[k] for k in t_keep])
        _, history["predictor"] = train_recurrent(
            net, (X[fit_sl], y[fit_sl]), (X[val_sl], y[val_sl]), settings.training_for(0))
        predictor = net
        base_train = net.predict(X)

    model = FittedModel(
        preset=preset, station_id=cell.table.station_id, pollutant=cell.pollutant, horizon=cell.horizon,
        temporal_names=tuple(t_names), weather_names=tuple(w_names),
        temporal_keep=list(t_keep), weather_keep=list(w_keep), target_scaler=cell.target_scaler,
        predictor=predictor, gbt_temporal=gbt_t, gbt_weather=gbt_w,
        scalers=dict(cell.scalers), weather_scalers=dict(cell.weather.scalers),
        settings_echo={"corrector_uses_pruned_weather": settings.corrector_uses_pruned_weather},
        history=history,
    )
    if wiring.corrector:
        cw = Xw[:, w_keep] if model.settings_echo["corrector_uses_pruned_weather"] else Xw
        model.corrector = train_corrector(
            base_train[fit_sl], y[fit_sl], cw[fit_sl], settings.training_for(1), settings.dense,
            validation=(base_train[val_sl], y[val_sl], cw[val_sl]),
        )
        history["corrector"] = model.corrector.history
    return model


@dataclass
class PresetResult:
    preset: str
    test: MetricsReport
    train: MetricsReport | None
    predictions: np.ndarray
    observed: np.ndarray
    target_times: np.ndarray
    model: FittedModel | None = None
    n_clamped: int = 0


def baseline_predictions(cell: CellData, preset: str, which: str = "test") -> np.ndarray:
    ds, _ = cell.part(which)
    if preset == "cmaq24_raw":
        return cell.forecast_triples(which)[:, 0].copy()
    if preset == "persistence":
        obs = np.asarray(cell.table[cell.pollutant])
        return obs[ds.rows - cell.horizon].copy()
    if preset == "analog_ensemble":
        db = baselines.AnalogDatabase.build(cell.forecast_triples("train"), cell.observed("train"))
        return baselines.analog_predict(db, cell.forecast_triples(which))
    raise ConfigError(f"{preset!r} is not a baseline preset")


def run_preset(cell: CellData, preset: str, settings: FitSettings = FitSettings()) -> PresetResult:
    """Fit (when learned) and evaluate one preset on the cell's test part."""
    wiring = baselines.comparison_preset(preset)
    y_test = cell.observed("test")
    cmaq_test = cell.forecast_triples("test")[:, 0]
    test_ds, test_wm = cell.part("test")
    model, train_report, clamped = None, None, 0
    if wiring.learned:
        model = fit_preset(cell, preset, settings)
        _, _, pred, clamped = model.predict_components(test_ds, test_wm)
        train_ds, train_wm = cell.part("train")
        train_pred = model.predict(train_ds, train_wm)
        train_report = evaluate(cell.observed("train"), train_pred, cell.forecast_triples("train")[:, 0])
    else:
        pred = baseline_predictions(cell, preset, "test")
    return PresetResult(
        preset=preset,
        test=evaluate(y_test, pred, cmaq_test),
        train=train_report,
        predictions=pred,
        observed=y_test,
        target_times=test_ds.target_times,
        model=model,
        n_clamped=clamped,
    )
