"""Point-forecast metrics and accuracy improvement over the raw 24 h forecast."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError, UndefinedMetricError


def _pair(y, y_hat):
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise DimensionError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise DimensionError("metrics need at least one point")
    return y, y_hat


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def bias(y, y_hat) -> float:
    """Mean signed error ``mean(y_hat - y)``; positive means over-prediction."""
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(y_hat - y))


def rmse(y, y_hat) -> float:
    return float(np.sqrt(euclidean_loss(y_hat, y)))


def r_squared(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    centred = y - y.mean()
    ss_tot = float(np.dot(centred, centred))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 is undefined for a constant target")
    diff = y - y_hat
    return 1.0 - float(np.dot(diff, diff)) / ss_tot


def euclidean_loss(predictions, truth) -> float:
    """Mean squared deviation; the normaliser equals the number of points."""
    p, t = _pair(predictions, truth)
    diff = p - t
    return float(np.dot(diff, diff)) / diff.size


def accuracy_improvement(eps_base: float, eps_model: float) -> float:
    """Percentage reduction of the model's loss relative to the baseline's."""
    if not eps_base > 0:
        raise UndefinedMetricError("baseline loss is zero; improvement is undefined")
    return (eps_base - eps_model) / eps_base * 100.0


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    r2: float
    eps_base: float
    eps_model: float
    accuracy_improvement: float
    n_points: int
    mean_observed: float
    bias: float

    def to_dict(self):
        return asdict(self)


def evaluate(y_true, y_model, y_cmaq24) -> MetricsReport:
    """All metrics for one run; ``y_cmaq24`` is the raw 24 h forecast baseline."""
    y, p = _pair(y_true, y_model)
    eps_base = euclidean_loss(y_cmaq24, y)
    eps_model = euclidean_loss(p, y)
    try:
        r2 = r_squared(y, p)
    except UndefinedMetricError:
        r2 = float("nan")
    try:
        acc = accuracy_improvement(eps_base, eps_model)
    except UndefinedMetricError:
        acc = float("nan")
    return MetricsReport(
        mae=mae(y, p),
        rmse=rmse(y, p),
        r2=r2,
        eps_base=eps_base,
        eps_model=eps_model,
        accuracy_improvement=acc,
        n_points=int(y.size),
        mean_observed=float(y.mean()),
        bias=bias(y, p),
    )
