import numpy as np
import pytest

from aircorrect.corrector import (
    Corrector,
    DenseConfig,
    DenseNet,
    apply_correction,
    dense_forward,
    train_corrector,
)
from aircorrect.data import ScalerParams
from aircorrect.errors import DimensionError
from aircorrect.optim import TrainingConfig
from oracles import FD_TOL, max_fd_error, random_dense


def _zero_net(n=4):
    net = DenseNet(DenseConfig(), n)
    for v in net.params.values():
        v[...] = 0.0
    return net


def test_zero_network_gives_half():
    assert dense_forward(_zero_net(), np.array([1.0, -2.0, 0.3, 9.0])) == 0.5


def test_inference_repeatable_and_saturating():
    net = DenseNet(DenseConfig(), 3, seed=1)
    x = np.random.default_rng(0).uniform(size=(5, 3))
    np.testing.assert_array_equal(net.predict(x), net.predict(x))
    net.params[f"d{net.n_layers - 1}.b"][0] = 800.0
    assert abs(dense_forward(net, x[0]) - 1.0) <= np.finfo(float).eps


def test_dimension_checked():
    with pytest.raises(DimensionError):
        DenseNet(DenseConfig(), 3).predict(np.zeros((2, 4)))


def test_dense_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(10):
        net, X, y = random_dense(rng)
        seed = int(rng.integers(100)) if net.config.dropout_rate > 0 else None
        assert max_fd_error(net, X, y, mask_seed=seed) <= FD_TOL


def test_perfect_recurrent_prediction_gives_identity():
    pred = np.linspace(0, 1, 20)
    W = np.random.default_rng(0).uniform(size=(20, 3))
    corr = train_corrector(pred, pred.copy(), W, TrainingConfig(epochs=2))
    assert corr.degenerate
    res = apply_correction(pred, W, corr, ScalerParams(0.0, 50.0))
    np.testing.assert_array_equal(res.values, pred * 50.0)


def test_corrector_learns_linear_temperature_residual():
    rng = np.random.default_rng(3)
    n = 1500
    W = rng.uniform(size=(n, 4))
    pred = rng.uniform(size=n)
    residual = 0.2 * W[:, 0] - 0.1
    corr = train_corrector(pred, pred + residual, W, TrainingConfig(epochs=150, patience=15),
                           validation=(pred[:200], pred[:200] + residual[:200], W[:200]))
    err = corr.correction(W) - residual
    assert np.mean(err ** 2) < 0.1 * np.var(residual)


def test_corrector_training_is_seeded():
    rng = np.random.default_rng(1)
    W = rng.uniform(size=(100, 2))
    pred, obs = rng.uniform(size=100), rng.uniform(size=100)
    a = train_corrector(pred, obs, W, TrainingConfig(epochs=3, seed=4))
    b = train_corrector(pred, obs, W, TrainingConfig(epochs=3, seed=4))
    for k in a.net.params:
        np.testing.assert_array_equal(a.net.params[k], b.net.params[k])


class _Fixed(Corrector):
    def __init__(self, value):
        super().__init__(None, None)
        self.value = value

    def correction(self, features):
        return np.full(len(features), self.value)


def test_correction_scaler_algebra():
    res = apply_correction(np.array([0.3, 0.5]), np.zeros((2, 1)), _Fixed(0.1), ScalerParams(0.0, 100.0))
    np.testing.assert_allclose(res.values, [40.0, 60.0], rtol=1e-14)
    np.testing.assert_allclose(res.scaled, [0.4, 0.6], rtol=1e-14)
    assert res.n_clamped == 0


def test_negative_concentration_clamped_and_counted():
    res = apply_correction(np.array([0.05, 0.5]), np.zeros((2, 1)), _Fixed(-0.1), ScalerParams(0.0, 100.0))
    assert res.values[0] == 0.0
    assert res.n_clamped == 1
    assert res.values[1] == pytest.approx(40.0)


def test_misaligned_inputs_rejected():
    with pytest.raises(DimensionError):
        train_corrector(np.zeros(3), np.zeros(3), np.zeros((4, 2)))
