"""Adam, gradient clipping and the seeded mini-batch loop shared by the networks."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 128
    epochs: int = 300
    patience: int = 20
    seed: int = 0
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.patience < 0:
            raise ConfigError("patience must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: dict, grads: dict, state: AdamState, config: TrainingConfig) -> tuple[dict, AdamState]:
    """One bias-corrected Adam step. ``params`` is updated in place and returned."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= config.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + config.epsilon)
    return params, state


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads: dict, max_norm: float | None) -> dict:
    if max_norm is None:
        return grads
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


def fit_minibatch(model, X, y, X_val=None, y_val=None, config: TrainingConfig = TrainingConfig()):
    """Seeded shuffled mini-batch training with early stopping.

    ``model`` must expose ``params`` (dict of arrays), ``loss_and_grads(X, y,
    rng)`` in training mode and ``predict(X)``. Returns the per-epoch history;
    the model ends holding the parameters of its best validation epoch.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ConfigError("training set is empty")
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    history = []
    best_loss, best_params, bad = math.inf, None, 0
    has_val = X_val is not None and len(X_val) > 0
    n = len(y)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            loss, grads = model.loss_and_grads(X[idx], y[idx], rng)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = clip_by_global_norm(grads, config.clip_norm)
            adam_update(model.params, grads, state, config)
            total += loss * len(idx)
        train_loss = total / n
        if has_val:
            val_loss = float(np.mean((model.predict(X_val) - y_val) ** 2))
        else:
            val_loss = train_loss
        if not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})

        if val_loss < best_loss:
            best_loss, bad = val_loss, 0
            best_params = copy.deepcopy(model.params)
        else:
            bad += 1
            if bad >= max(config.patience, 1):
                log.debug("early stop at epoch %d (best %.6g)", epoch, best_loss)
                break

    if best_params is not None:
        model.params.update(best_params)
    return history
