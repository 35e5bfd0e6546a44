import math

import numpy as np
import pytest

from aircorrect.errors import ConfigError, DivergenceError
from aircorrect.optim import AdamState, TrainingConfig, adam_update, clip_by_global_norm, fit_minibatch, global_norm


def test_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    s = AdamState()
    adam_update(p, {"w": np.zeros(2)}, s, TrainingConfig())
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert s.step == 1


def test_first_step_magnitude():
    p = {"w": np.array([0.0])}
    adam_update(p, {"w": np.array([1.0])}, AdamState(), TrainingConfig(learning_rate=0.01))
    # bias-corrected m = v = 1, so the step is lr / (1 + eps)
    assert p["w"][0] == pytest.approx(-0.01 / (1 + 1e-8), rel=1e-12)


def test_step_counter_advances():
    p = {"w": np.array([0.5])}
    s = AdamState()
    for _ in range(2):
        adam_update(p, {"w": np.array([0.3])}, s, TrainingConfig())
    assert s.step == 2
    # constant gradient: every bias-corrected step has the same size
    assert p["w"][0] == pytest.approx(0.5 - 2 * 0.01 / (1 + 1e-8 / 0.3), rel=1e-9)


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert global_norm(g) == 5.0
    c = clip_by_global_norm(g, 1.0)
    assert global_norm(c) == pytest.approx(1.0)
    assert clip_by_global_norm(g, None) is g
    assert clip_by_global_norm(g, 10.0)["a"][0] == 3.0


class _Quadratic:
    """Minimises ``mean((w - y)^2)``; ``losses`` scripts validation losses."""

    def __init__(self, val_losses=None):
        self.params = {"w": np.zeros(1)}
        self.val = list(val_losses or [])

    def loss_and_grads(self, X, y, rng=None, training=True):
        err = self.params["w"][0] - y
        return float(np.mean(err ** 2)), {"w": np.array([2 * np.mean(err)])}

    def predict(self, X):
        if self.val:
            # scripted validation: return values whose MSE against zeros is the script
            return np.full(len(X), math.sqrt(self.val.pop(0)))
        return np.full(len(X), self.params["w"][0])


def test_patience_zero_stops_one_epoch_after_first_non_improvement():
    m = _Quadratic([1.0, 0.5, 0.7, 0.1, 0.1])
    hist = fit_minibatch(m, np.zeros((4, 1)), np.ones(4), np.zeros((2, 1)), np.zeros(2),
                         TrainingConfig(epochs=10, patience=0))
    assert [h["epoch"] for h in hist] == [1, 2, 3]


def test_patience_counts_consecutive_bad_epochs():
    m = _Quadratic([1.0, 0.9, 0.95, 0.8, 0.85, 0.86, 0.87, 0.1])
    hist = fit_minibatch(m, np.zeros((4, 1)), np.ones(4), np.zeros((2, 1)), np.zeros(2),
                         TrainingConfig(epochs=10, patience=3))
    assert len(hist) == 7


def test_best_parameters_restored():
    class Tracker(_Quadratic):
        def predict(self, X):
            # validation loss improves until epoch 3 then worsens
            e = len(self.seen)
            self.seen.append(self.params["w"].copy())
            return np.full(len(X), [1.0, 0.5, 0.1, 0.4, 0.6, 0.9][e])

    m = Tracker()
    m.seen = []
    fit_minibatch(m, np.zeros((4, 1)), np.ones(4), np.zeros((2, 1)), np.zeros(2),
                  TrainingConfig(epochs=6, patience=3))
    np.testing.assert_array_equal(m.params["w"], m.seen[2])


def test_divergence_names_epoch_and_batch():
    class Bad(_Quadratic):
        def loss_and_grads(self, X, y, rng=None, training=True):
            return float("nan"), {"w": np.zeros(1)}

    with pytest.raises(DivergenceError, match="epoch 1, batch 0"):
        fit_minibatch(Bad(), np.zeros((3, 1)), np.ones(3))


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainingConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainingConfig(learning_rate=0)
