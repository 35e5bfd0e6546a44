"""Reference predictors and the comparison-preset wiring table."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

from .errors import ConfigError, EmptyDatasetError

log = logging.getLogger(__name__)

# weights on the squared level differences at leads 24/48/72 h, then on the
# squared differences of the 24-48 and 48-72 h trends
LEVEL_WEIGHTS = (1.0, 0.8, 0.6)
TREND_WEIGHTS = (0.3, 0.2)
ANALOG_WEIGHTS = MappingProxyType({"level": LEVEL_WEIGHTS, "trend": TREND_WEIGHTS})


def analog_distance(train_triple, now_triple) -> tuple[float, float]:
    """Level distance ``d1`` and trend distance ``d2`` between two forecast triples."""
    t24, t48, t72 = (float(v) for v in train_triple)
    n24, n48, n72 = (float(v) for v in now_triple)
    w1, w2, w3 = LEVEL_WEIGHTS
    d1 = w1 * (t24 - n24) ** 2 + w2 * (t48 - n48) ** 2 + w3 * (t72 - n72) ** 2
    v1, v2 = TREND_WEIGHTS
    d2 = v1 * ((t24 - t48) - (n24 - n48)) ** 2 + v2 * ((t48 - t72) - (n48 - n72)) ** 2
    return d1, d2


def analog_distances(train: np.ndarray, now) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`analog_distance` of one triple against many (rows of ``train``)."""
    train = np.asarray(train, dtype=float)
    n24, n48, n72 = (float(v) for v in now)
    w1, w2, w3 = LEVEL_WEIGHTS
    d1 = (w1 * (train[:, 0] - n24) ** 2 + w2 * (train[:, 1] - n48) ** 2
          + w3 * (train[:, 2] - n72) ** 2)
    v1, v2 = TREND_WEIGHTS
    d2 = (v1 * ((train[:, 0] - train[:, 1]) - (n24 - n48)) ** 2
          + v2 * ((train[:, 1] - train[:, 2]) - (n48 - n72)) ** 2)
    return d1, d2


@dataclass(frozen=True)
class AnalogDatabase:
    """Historical forecast triples (chronological) with the matching observations."""

    triples: np.ndarray
    observed: np.ndarray
    level_weight: float = 1.0
    trend_weight: float = 1.0
    multiplicative: bool = False

    def __post_init__(self):
        if len(self.triples) == 0:
            raise EmptyDatasetError("analog database is empty")
        if self.triples.shape != (len(self.observed), 3):
            raise ConfigError("triples must be an (n, 3) array aligned with observed")
        if not (np.all(np.isfinite(self.triples)) and np.all(np.isfinite(self.observed))):
            raise ConfigError("analog database holds non-finite values")

    @classmethod
    def build(cls, triples, observed, **kw) -> "AnalogDatabase":
        return cls(np.asarray(triples, dtype=float).copy(), np.asarray(observed, dtype=float).copy(), **kw)

    @property
    def bias(self) -> np.ndarray:
        """Observed minus 24 h forecast for every stored point."""
        return self.observed - self.triples[:, 0]

    def nearest(self, now_triple) -> int:
        d1, d2 = analog_distances(self.triples, now_triple)
        # argmin returns the first minimum, i.e. the earliest time point
        return int(np.argmin(self.level_weight * d1 + self.trend_weight * d2))


def analog_adjust(db: AnalogDatabase, now_triple) -> float:
    """Raw 24 h forecast corrected by the most similar historical point.

    The additive mode transfers that point's observed bias; the multiplicative
    mode applies its observed/forecast ratio instead.
    """
    k = db.nearest(now_triple)
    now24 = float(now_triple[0])
    if db.multiplicative:
        ref = db.triples[k, 0]
        ratio = db.observed[k] / ref if ref != 0 else 1.0
        return now24 * ratio
    return now24 + float(db.bias[k])


def analog_predict(db: AnalogDatabase, now_triples) -> np.ndarray:
    return np.array([analog_adjust(db, row) for row in np.asarray(now_triples, dtype=float)])


def persistence_forecast(series, horizon: int) -> np.ndarray:
    """Prediction for index ``t >= horizon`` is the observation at ``t - horizon``."""
    series = np.asarray(series, dtype=float)
    if horizon >= len(series):
        log.warning("horizon %d exceeds series length %d; no persistence forecast", horizon, len(series))
        return np.zeros(0)
    return series[:len(series) - horizon].copy()


# ----------------------------------------------------------------------------
# Comparison presets
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PresetWiring:
    """Which stages a model variant runs.

    ``predictor`` is ``lstm``/``gru`` for a recurrent cascade, ``dense`` for a
    dense net over temporal and weather features together, or one of the
    non-learned baselines ``cmaq24``/``persistence``/``analog``.
    """

    name: str
    predictor: str
    pruning: bool
    corrector: bool

    @property
    def stages(self) -> tuple:
        out = []
        if self.pruning:
            out.append("importance_pruning")
        out.append(f"{self.predictor}_predictor")
        if self.corrector:
            out.append("residual_corrector")
        out.append("evaluation")
        return tuple(out)

    @property
    def learned(self) -> bool:
        return self.predictor in ("lstm", "gru", "dense")


PRESETS = MappingProxyType({
    "ptc": PresetWiring("ptc", "lstm", pruning=True, corrector=True),
    "gru_xgb": PresetWiring("gru_xgb", "gru", pruning=True, corrector=False),
    "lstm_dnn": PresetWiring("lstm_dnn", "lstm", pruning=False, corrector=True),
    "dnn_xgb": PresetWiring("dnn_xgb", "dense", pruning=True, corrector=False),
    "cmaq24_raw": PresetWiring("cmaq24_raw", "cmaq24", pruning=False, corrector=False),
    "persistence": PresetWiring("persistence", "persistence", pruning=False, corrector=False),
    "analog_ensemble": PresetWiring("analog_ensemble", "analog", pruning=False, corrector=False),
})
MODEL_PRESETS = ("ptc", "gru_xgb", "lstm_dnn", "dnn_xgb")
COMPARISON_PRESETS = tuple(PRESETS)


def comparison_preset(name: str) -> PresetWiring:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}") from None
