import numpy as np
import pytest

from aircorrect.baselines import (
    ANALOG_WEIGHTS,
    AnalogDatabase,
    analog_adjust,
    analog_distance,
    analog_predict,
    comparison_preset,
    persistence_forecast,
)
from aircorrect.errors import ConfigError, EmptyDatasetError


def test_distance_identity():
    assert analog_distance((3.0, 4.0, 5.0), (3.0, 4.0, 5.0)) == (0.0, 0.0)


def test_distance_hand_values():
    d1, d2 = analog_distance((1, 1, 1), (0, 0, 0))
    assert d1 == pytest.approx(2.4, abs=1e-12) and d2 == 0.0
    d1, d2 = analog_distance((2, 1, 0), (0, 0, 0))
    assert d1 == pytest.approx(4.8, abs=1e-12)
    assert d2 == pytest.approx(0.5, abs=1e-12)


def test_weights_are_read_only():
    assert ANALOG_WEIGHTS["level"] == (1.0, 0.8, 0.6)
    with pytest.raises(TypeError):
        ANALOG_WEIGHTS["level"] = (1, 1, 1)


def test_exact_match_transfers_bias():
    db = AnalogDatabase.build([[10, 12, 14], [30, 31, 32]], [13.0, 25.0])
    assert analog_adjust(db, [10, 12, 14]) == 13.0
    assert analog_adjust(db, [29, 31, 32]) == 29 - 5.0


def test_single_entry_always_used():
    db = AnalogDatabase.build([[1, 2, 3]], [4.0])
    assert analog_adjust(db, [100, -5, 7]) == 103.0


def test_tie_goes_to_earliest():
    db = AnalogDatabase.build([[1, 0, 0], [-1, 0, 0]], [5.0, 9.0])
    assert db.nearest([0, 0, 0]) == 0
    assert analog_adjust(db, [0, 0, 0]) == 4.0


def test_multiplicative_mode():
    db = AnalogDatabase.build([[10, 10, 10]], [12.0], multiplicative=True)
    assert analog_adjust(db, [20, 20, 20]) == pytest.approx(24.0)


def test_self_retrieval():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 40))
        tr = rng.normal(size=(n, 3)) * 10
        obs = rng.normal(size=n) * 10
        db = AnalogDatabase.build(tr, obs)
        np.testing.assert_allclose(analog_predict(db, tr), obs, rtol=0, atol=1e-12)


def test_empty_database_rejected():
    with pytest.raises(EmptyDatasetError):
        AnalogDatabase.build(np.zeros((0, 3)), np.zeros(0))


def test_persistence():
    np.testing.assert_array_equal(persistence_forecast(np.full(10, 3.0), 4), np.full(6, 3.0))
    ramp = np.arange(50, dtype=float)
    h = 6
    pred = persistence_forecast(ramp, h)
    np.testing.assert_array_equal(ramp[h:] - pred, h)


def test_persistence_too_long(caplog):
    out = persistence_forecast(np.arange(5.0), 5)
    assert out.size == 0
    assert "exceeds" in caplog.text


def test_presets():
    assert comparison_preset("ptc").stages == ("importance_pruning", "lstm_predictor", "residual_corrector", "evaluation")
    assert "importance_pruning" not in comparison_preset("lstm_dnn").stages
    g = comparison_preset("gru_xgb")
    assert (g.predictor, g.pruning, g.corrector) == ("gru", True, False)
    d = comparison_preset("dnn_xgb")
    assert (d.predictor, d.pruning, d.corrector) == ("dense", True, False)
    with pytest.raises(ConfigError, match="ptc"):
        comparison_preset("foo")
