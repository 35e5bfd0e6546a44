"""Dense residual corrector applied on top of the recurrent prediction.

The output layer is a single sigmoid unit, so it cannot emit a signed,
unbounded residual directly. Training residuals (observed minus recurrent
prediction, in scaled-target units) are therefore min-max mapped to [0, 1]
with a :class:`ResidualScaler`; the inverse map turns the network output back
into an additive correction.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ScalerParams, fit_minmax
from .errors import ConfigError, DegenerateFeatureError, DimensionError
from .optim import TrainingConfig, fit_minibatch
from .recurrent import dropout_mask, glorot, sigmoid

log = logging.getLogger(__name__)

ResidualScaler = ScalerParams


@dataclass(frozen=True)
class DenseConfig:
    hidden: tuple = (16, 32, 64, 32, 16)
    dropout_rate: float = 0.2
    # 1-based hidden layers followed by dropout
    dropout_after: tuple = (1, 2, 3)
    output: str = "sigmoid"
    dtype: str = "float64"

    def __post_init__(self):
        if self.output not in ("sigmoid", "linear"):
            raise ConfigError(f"unknown output activation {self.output!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if any(w < 1 for w in self.hidden):
            raise ConfigError("hidden widths must be positive")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["dropout_after"] = list(self.dropout_after)
        return d


class DenseNet:
    """ReLU multilayer perceptron with one output unit."""

    def __init__(self, config: DenseConfig, n_features: int, seed: int = 0, feature_names=None):
        self.config = config
        self.n_features = int(n_features)
        self.feature_names = tuple(feature_names) if feature_names is not None else None
        rng = np.random.default_rng(seed)
        widths = [self.n_features, *config.hidden, 1]
        self.params = {}
        for k in range(len(widths) - 1):
            self.params[f"d{k}.W"] = glorot(rng, widths[k + 1], widths[k]).astype(config.dtype)
            self.params[f"d{k}.b"] = np.zeros(widths[k + 1], dtype=config.dtype)

    @property
    def n_layers(self) -> int:
        return len(self.config.hidden) + 1

    def forward(self, X, training=False, rng=None):
        a = np.asarray(X, dtype=self.config.dtype)
        if a.ndim == 1:
            a = a[None, :]
        if a.shape[1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} features, got {a.shape[1]}")
        acts, masks = [a], []
        last = self.n_layers - 1
        for k in range(self.n_layers):
            z = a @ self.params[f"d{k}.W"].T + self.params[f"d{k}.b"]
            if k == last:
                out = sigmoid(z[:, 0]) if self.config.output == "sigmoid" else z[:, 0]
                return out, (acts, masks, out)
            a = np.maximum(z, 0.0)
            mask = None
            if training and (k + 1) in self.config.dropout_after:
                mask = dropout_mask(rng, a.shape, self.config.dropout_rate, a.dtype)
                if mask is not None:
                    a = a * mask
            masks.append(mask)
            acts.append(a)

    def backward(self, cache, dout):
        acts, masks, out = cache
        grads = {}
        if self.config.output == "sigmoid":
            dz = (dout * out * (1.0 - out))[:, None]
        else:
            dz = dout[:, None]
        for k in reversed(range(self.n_layers)):
            a_in = acts[k]
            grads[f"d{k}.W"] = dz.T @ a_in
            grads[f"d{k}.b"] = dz.sum(axis=0)
            if k == 0:
                break
            da = dz @ self.params[f"d{k}.W"]
            mask = masks[k - 1]
            if mask is not None:
                da = da * mask
            # relu derivative: the stored activation is positive exactly where z > 0
            dz = da * (a_in > 0)
        return grads

    def loss_and_grads(self, X, y, rng=None, training=True):
        out, cache = self.forward(X, training=training, rng=rng)
        err = out - np.asarray(y, dtype=out.dtype)
        loss = float(np.mean(err.astype(float) ** 2))
        return loss, self.backward(cache, 2.0 * err / len(err))

    def predict(self, X):
        X = np.asarray(X)
        if len(X) == 0:
            return np.zeros(0)
        return self.forward(X, training=False)[0].astype(float)


def dense_forward(net: DenseNet, features, training=False, rng=None):
    """Network output for one feature vector (float) or a matrix (array)."""
    features = np.asarray(features, dtype=float)
    out, _ = net.forward(features, training=training, rng=rng)
    return float(out[0]) if features.ndim == 1 else out.astype(float)


@dataclass
class Corrector:
    """Trained corrector, or the identity when residuals were degenerate."""

    net: DenseNet | None
    residual_scaler: ResidualScaler | None
    history: list = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return self.net is None

    def correction(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if self.degenerate:
            return np.zeros(len(features))
        return self.residual_scaler.inverse_transform(self.net.predict(features))


def train_corrector(
    recurrent_pred,
    observed,
    weather,
    config: TrainingConfig = TrainingConfig(),
    dense: DenseConfig = DenseConfig(),
    validation=None,
    seed: int | None = None,
) -> Corrector:
    """Fit the dense net to min-max scaled residuals ``observed - recurrent_pred``.

    ``validation`` is an optional ``(recurrent_pred, observed, weather)`` triple
    used for early stopping. Constant residuals give an identity corrector.
    """
    recurrent_pred = np.asarray(recurrent_pred, dtype=float)
    observed = np.asarray(observed, dtype=float)
    W = np.asarray(getattr(weather, "values", weather), dtype=float)
    if not (len(recurrent_pred) == len(observed) == len(W)):
        raise DimensionError("recurrent predictions, targets and weather rows must align")
    residual = observed - recurrent_pred
    try:
        rscale = fit_minmax(residual, "residual")
    except DegenerateFeatureError:
        log.info("constant residuals; corrector reduces to the identity")
        return Corrector(None, None)
    if W.shape[1] == 0:
        log.warning("no weather features left; corrector reduces to the identity")
        return Corrector(None, None)
    names = getattr(weather, "feature_names", None)
    net = DenseNet(dense, W.shape[1], seed=config.seed if seed is None else seed, feature_names=names)
    Xv = yv = None
    if validation is not None:
        vp, vo, vw = validation
        Xv = np.asarray(getattr(vw, "values", vw), dtype=float)
        yv = rscale.transform(np.asarray(vo, dtype=float) - np.asarray(vp, dtype=float))
    history = fit_minibatch(net, W, rscale.transform(residual), Xv, yv, config)
    return Corrector(net, rscale, history)


@dataclass
class CorrectionResult:
    values: np.ndarray
    scaled: np.ndarray
    n_clamped: int


def apply_correction(recurrent_pred, weather, corrector: Corrector, target_scaler: ScalerParams) -> CorrectionResult:
    """Add the corrector's residual estimate and map back to physical units.

    Negative concentrations are clamped to zero and counted.
    """
    recurrent_pred = np.asarray(recurrent_pred, dtype=float)
    W = np.asarray(getattr(weather, "values", weather), dtype=float)
    scaled = recurrent_pred + corrector.correction(W)
    physical = target_scaler.inverse_transform(scaled)
    neg = physical < 0
    n_clamped = int(neg.sum())
    if n_clamped:
        log.debug("clamped %d negative concentrations", n_clamped)
    return CorrectionResult(np.where(neg, 0.0, physical), scaled, n_clamped)
