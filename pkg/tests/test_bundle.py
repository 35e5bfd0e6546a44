import json

import numpy as np
import pytest

from aircorrect.boosting import GBTConfig
from aircorrect.bundle import (
    BUNDLE_MAGIC,
    decode_array,
    describe_bundle,
    encode_array,
    load_bundle,
    save_bundle,
)
from aircorrect.errors import BundleFormatError, UnsupportedVersionError
from aircorrect.model import FitSettings, fit_preset, prepare_cell
from aircorrect.optim import TrainingConfig

FAST = FitSettings(training=TrainingConfig(epochs=2, patience=1), gbt=GBTConfig(n_estimators=15))


@pytest.fixture(scope="module")
def cell(small_table):
    return prepare_cell(small_table, "pm25", 24, FAST)


@pytest.mark.parametrize("preset", ["ptc", "gru_xgb", "lstm_dnn", "dnn_xgb"])
def test_round_trip_bit_exact(tmp_path, cell, preset):
    model = fit_preset(cell, preset, FAST)
    path = save_bundle(model, tmp_path / "m.json")
    back = load_bundle(path)
    rng = np.random.default_rng(0)
    # arbitrary inputs, including values outside the training range
    T = rng.uniform(-0.5, 1.5, size=(40, len(cell.dataset.feature_names)))
    W = rng.uniform(-0.5, 1.5, size=(40, len(cell.weather.feature_names)))
    for a, b in zip(model.predict_components(T, W), back.predict_components(T, W)):
        np.testing.assert_array_equal(a, b)
    assert back.temporal_keep == model.temporal_keep
    info = describe_bundle(path)
    assert info["preset"] == preset and info["n_parameters"] > 0


def test_array_encoding_keeps_dtype_and_shape():
    a = np.arange(6, dtype=np.float32).reshape(2, 3) / 7
    b = decode_array(json.loads(json.dumps(encode_array(a))))
    assert b.dtype == np.float32 and b.shape == (2, 3)
    np.testing.assert_array_equal(a, b)


def _doc(tmp_path, cell):
    path = save_bundle(fit_preset(cell, "gru_xgb", FAST), tmp_path / "m.json")
    return path, json.loads(path.read_text())


def test_corrupted_magic(tmp_path, cell):
    path, doc = _doc(tmp_path, cell)
    doc["magic"] = "NOT-A-BUNDLE"
    path.write_text(json.dumps(doc))
    with pytest.raises(BundleFormatError):
        load_bundle(path)


def test_old_version_unsupported(tmp_path, cell):
    path, doc = _doc(tmp_path, cell)
    assert doc["magic"] == BUNDLE_MAGIC
    doc["magic"] = "AIRCORRECT-BUNDLE-v0"
    path.write_text(json.dumps(doc))
    with pytest.raises(UnsupportedVersionError):
        load_bundle(path)


def test_section_magic_checked(tmp_path, cell):
    path, doc = _doc(tmp_path, cell)
    doc["gbt_temporal"]["magic"] = "AIRCORRECT-GBT-v0"
    path.write_text(json.dumps(doc))
    with pytest.raises(UnsupportedVersionError):
        load_bundle(path)


def test_truncated_file(tmp_path, cell):
    path, _ = _doc(tmp_path, cell)
    path.write_text(path.read_text()[:100])
    with pytest.raises(BundleFormatError):
        load_bundle(path)


def test_shape_mismatch(tmp_path, cell):
    path, doc = _doc(tmp_path, cell)
    w = doc["predictor"]["params"]["head.W"]
    w["shape"] = [1, len(w["data"]) - 1]
    w["data"] = w["data"][:-1]
    path.write_text(json.dumps(doc))
    with pytest.raises(BundleFormatError):
        load_bundle(path)
