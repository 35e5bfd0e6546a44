"""JSON model bundles.

A bundle is one JSON document per fitted model. Every parameter array is
stored with an explicit shape and dtype and its values flattened in row-major
order. Floats are written with ``repr`` precision, so ``load(save(m))``
predicts bit-exactly. Each section carries its own versioned magic string.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .boosting import GBTConfig, GBTModel, Tree
from .corrector import Corrector, DenseConfig, DenseNet
from .data import ScalerParams
from .errors import BundleFormatError, UnsupportedVersionError
from .model import FittedModel
from .recurrent import CascadeConfig, CascadeNet

BUNDLE_MAGIC = "AIRCORRECT-BUNDLE-v1"
RNN_MAGIC = "AIRCORRECT-RNN-v1"
DNN_MAGIC = "AIRCORRECT-DNN-v1"
GBT_MAGIC = "AIRCORRECT-GBT-v1"

_MAGIC_RE = re.compile(r"^(AIRCORRECT-[A-Z]+)-v(\d+)$")


def _check_magic(found, expected: str) -> None:
    if found == expected:
        return
    m = _MAGIC_RE.match(found) if isinstance(found, str) else None
    want = _MAGIC_RE.match(expected)
    if m and m.group(1) == want.group(1):
        raise UnsupportedVersionError(
            f"{m.group(1)} version v{m.group(2)} is not supported (expected v{want.group(2)})")
    raise BundleFormatError(f"bad magic string {found!r}; expected {expected!r}")


def encode_array(a) -> dict:
    a = np.asarray(a)
    return {"shape": list(a.shape), "dtype": a.dtype.name, "data": a.ravel(order="C").tolist()}


def decode_array(d) -> np.ndarray:
    try:
        a = np.asarray(d["data"], dtype=np.dtype(d["dtype"]))
        return a.reshape(tuple(d["shape"]), order="C")
    except (KeyError, TypeError, ValueError) as e:
        raise BundleFormatError(f"malformed array entry: {e}") from None


def _scaler(d) -> ScalerParams | None:
    return None if d is None else ScalerParams(float(d["min"]), float(d["max"]))


def _scalers_out(scalers: dict) -> dict:
    return {k: v.to_dict() for k, v in scalers.items()}


def _net_section(net, magic: str) -> dict:
    return {
        "magic": magic,
        "config": net.config.to_dict(),
        "n_features": net.n_features,
        "feature_names": None if net.feature_names is None else list(net.feature_names),
        "params": {k: encode_array(v) for k, v in net.params.items()},
    }


def _load_params(net, section) -> None:
    params = {k: decode_array(v) for k, v in section["params"].items()}
    if set(params) != set(net.params):
        raise BundleFormatError(f"parameter names {sorted(params)} do not match the architecture")
    for k, v in params.items():
        if v.shape != net.params[k].shape:
            raise BundleFormatError(f"parameter {k} has shape {v.shape}, expected {net.params[k].shape}")
    net.params = params


def dump_cascade(net: CascadeNet) -> dict:
    return _net_section(net, RNN_MAGIC)


def load_cascade(section) -> CascadeNet:
    _check_magic(section.get("magic"), RNN_MAGIC)
    net = CascadeNet(CascadeConfig(**section["config"]), section["n_features"], feature_names=section["feature_names"])
    _load_params(net, section)
    return net


def _dense_config(d) -> DenseConfig:
    d = dict(d)
    d["hidden"] = tuple(d["hidden"])
    d["dropout_after"] = tuple(d["dropout_after"])
    return DenseConfig(**d)


def dump_dense(net: DenseNet, residual_scaler: ScalerParams | None = None) -> dict:
    out = _net_section(net, DNN_MAGIC)
    out["residual_scaler"] = None if residual_scaler is None else residual_scaler.to_dict()
    return out


def load_dense(section) -> tuple[DenseNet, ScalerParams | None]:
    _check_magic(section.get("magic"), DNN_MAGIC)
    net = DenseNet(_dense_config(section["config"]), section["n_features"], feature_names=section["feature_names"])
    _load_params(net, section)
    return net, _scaler(section.get("residual_scaler"))


def dump_gbt(model: GBTModel) -> dict:
    return {
        "magic": GBT_MAGIC,
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "feature_names": list(model.feature_names),
        "config": model.config.to_dict(),
        "loss_history": list(model.loss_history),
        "trees": [t.to_dict() for t in model.trees],
    }


def load_gbt(section) -> GBTModel:
    _check_magic(section.get("magic"), GBT_MAGIC)
    return GBTModel(
        base_score=float(section["base_score"]),
        trees=[Tree.from_dict(t) for t in section["trees"]],
        learning_rate=float(section["learning_rate"]),
        feature_names=tuple(section["feature_names"]),
        config=GBTConfig(**section["config"]),
        loss_history=list(section["loss_history"]),
    )


def to_document(model: FittedModel) -> dict:
    if isinstance(model.predictor, CascadeNet):
        predictor = dump_cascade(model.predictor)
    else:
        predictor = dump_dense(model.predictor)
    corr = None
    if model.corrector is not None and not model.corrector.degenerate:
        corr = dump_dense(model.corrector.net, model.corrector.residual_scaler)
    return {
        "magic": BUNDLE_MAGIC,
        "preset": model.preset,
        "station_id": model.station_id,
        "pollutant": model.pollutant,
        "horizon": model.horizon,
        "temporal_names": list(model.temporal_names),
        "weather_names": list(model.weather_names),
        "temporal_keep": [int(k) for k in model.temporal_keep],
        "weather_keep": [int(k) for k in model.weather_keep],
        "target_scaler": model.target_scaler.to_dict(),
        "scalers": _scalers_out(model.scalers),
        "weather_scalers": _scalers_out(model.weather_scalers),
        "settings_echo": model.settings_echo,
        "predictor": predictor,
        "corrector": corr,
        "has_corrector": model.corrector is not None,
        "gbt_temporal": None if model.gbt_temporal is None else dump_gbt(model.gbt_temporal),
        "gbt_weather": None if model.gbt_weather is None else dump_gbt(model.gbt_weather),
    }


def from_document(doc) -> FittedModel:
    if not isinstance(doc, dict):
        raise BundleFormatError("bundle root must be a JSON object")
    _check_magic(doc.get("magic"), BUNDLE_MAGIC)
    try:
        pred = doc["predictor"]
        if pred.get("magic", "").startswith("AIRCORRECT-RNN"):
            predictor = load_cascade(pred)
        else:
            predictor, _ = load_dense(pred)
        corrector = None
        if doc["corrector"] is not None:
            net, rscale = load_dense(doc["corrector"])
            corrector = Corrector(net, rscale)
        elif doc.get("has_corrector"):
            corrector = Corrector(None, None)
        return FittedModel(
            preset=doc["preset"],
            station_id=doc["station_id"],
            pollutant=doc["pollutant"],
            horizon=int(doc["horizon"]),
            temporal_names=tuple(doc["temporal_names"]),
            weather_names=tuple(doc["weather_names"]),
            temporal_keep=list(doc["temporal_keep"]),
            weather_keep=list(doc["weather_keep"]),
            target_scaler=_scaler(doc["target_scaler"]),
            predictor=predictor,
            corrector=corrector,
            gbt_temporal=None if doc["gbt_temporal"] is None else load_gbt(doc["gbt_temporal"]),
            gbt_weather=None if doc["gbt_weather"] is None else load_gbt(doc["gbt_weather"]),
            scalers={k: _scaler(v) for k, v in doc["scalers"].items()},
            weather_scalers={k: _scaler(v) for k, v in doc["weather_scalers"].items()},
            settings_echo=dict(doc["settings_echo"]),
        )
    except (KeyError, TypeError, AttributeError) as e:
        raise BundleFormatError(f"malformed bundle: missing or invalid field {e}") from None


def save_bundle(model: FittedModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(to_document(model), fh, allow_nan=False)
        fh.write("\n")
    return path


def load_bundle(path) -> FittedModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise BundleFormatError(f"{path}: not a JSON bundle ({e})") from None
    return from_document(doc)


def describe_bundle(path) -> dict:
    """Short summary used by ``inspect-bundle``."""
    m = load_bundle(path)
    n_params = sum(int(v.size) for v in m.predictor.params.values())
    if m.corrector is not None and not m.corrector.degenerate:
        n_params += sum(int(v.size) for v in m.corrector.net.params.values())
    return {
        "preset": m.preset,
        "station": m.station_id,
        "pollutant": m.pollutant,
        "horizon_h": m.horizon,
        "stages": list(m.wiring.stages),
        "temporal_features": [m.temporal_names[k] for k in m.temporal_keep],
        "weather_features": [m.weather_names[k] for k in m.weather_keep],
        "n_parameters": n_params,
        "gbt_trees": {
            "temporal": None if m.gbt_temporal is None else len(m.gbt_temporal.trees),
            "weather": None if m.gbt_weather is None else len(m.gbt_weather.trees),
        },
    }
