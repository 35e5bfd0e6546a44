"""Experiment orchestration: config parsing, per-cell runs and report files.

A *cell* is one (station, pollutant, horizon) combination. Every cell is
prepared once and every requested preset is fitted on that preparation, so
presets share splits and seeds. Cells never share state; a failing cell is
recorded in the manifest and the remaining cells carry on.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import COMPARISON_PRESETS, comparison_preset
from .boosting import GBTConfig
from .bundle import save_bundle
from .data import (
    N_LAGS,
    POLLUTANTS,
    VALID_HORIZONS,
    BiasSpec,
    SplitSpec,
    StationTable,
    format_timestamp,
    generate_synthetic,
    impute_missing,
    load_stations,
)
from .errors import AirCorrectError, ConfigError
from .model import FitSettings, PresetResult, prepare_cell, run_preset
from .optim import TrainingConfig
from .recurrent import CascadeConfig

log = logging.getLogger(__name__)

METRICS_HEADER = ("station", "pollutant", "horizon_h", "model", "mae", "rmse", "r2",
                  "eps_base", "eps_model", "acc_improve_pct", "n")
SWEEP_HEADER = ("model", "horizon_h", "station", "pollutant", "mae")

_SYNTH_KEYS = {"seed", "n_hours", "offset", "scale", "noise_sd", "stations", "start"}
_CONFIG_KEYS = {
    "data", "stations", "pollutants", "horizons", "preset", "presets", "prune_threshold",
    "importance_metric", "training", "cascade", "gbt", "seed", "out", "include_calendar",
    "holidays", "aux_pollutants", "extra_lag_pollutants", "n_noise_features",
    "max_absent_fraction", "train_fraction", "validation_fraction", "shared_test_period",
}


@dataclass(frozen=True)
class ExperimentConfig:
    pollutants: tuple
    csv_path: str | None = None
    synthetic: dict | None = None
    stations: tuple | None = None
    horizons: tuple = (24,)
    horizons_given: bool = False
    preset: str = "ptc"
    presets: tuple | None = None
    prune_threshold: float | None = None
    importance_metric: str = "count"
    training: TrainingConfig = TrainingConfig()
    cascade: CascadeConfig = CascadeConfig(dtype="float32")
    gbt: GBTConfig = GBTConfig()
    seed: int = 0
    out: str = "aircorrect-run"
    include_calendar: bool = False
    holidays: tuple = ()
    aux_pollutants: bool = False
    extra_lag_pollutants: tuple = ()
    n_noise_features: int = 0
    max_absent_fraction: float = 0.25
    train_fraction: float = 0.8
    validation_fraction: float = 0.1
    shared_test_period: bool = True

    def settings(self) -> FitSettings:
        return FitSettings(
            split=SplitSpec(self.train_fraction),
            training=replace(self.training, seed=self.seed),
            cascade=self.cascade,
            gbt=self.gbt,
            prune_threshold=self.prune_threshold,
            importance_metric=self.importance_metric,
            validation_fraction=self.validation_fraction,
            include_calendar=self.include_calendar,
            holidays=self.holidays,
            aux_pollutants=self.aux_pollutants,
            extra_lag_pollutants=self.extra_lag_pollutants,
            n_noise_features=self.n_noise_features,
            seed=self.seed,
        )

    def echo(self) -> dict:
        d = asdict(self)
        d["training"] = self.training.to_dict()
        d["cascade"] = self.cascade.to_dict()
        d["gbt"] = self.gbt.to_dict()
        return json.loads(json.dumps(d))


def _overrides(cls, base, values, section):
    if values is None:
        return base
    if not isinstance(values, dict):
        raise ConfigError(f"{section} must be an object")
    known = set(base.to_dict())
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key!r}")
    try:
        return replace(base, **values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {section}: {e}") from None


def _str_list(raw, name) -> list:
    if isinstance(raw, str):
        raw = [raw]
    if not isinstance(raw, list) or not all(isinstance(v, str) for v in raw):
        raise ConfigError(f"{name} must be a list of strings")
    return raw


def _dedupe(values, name) -> tuple:
    out = []
    for v in values:
        if v in out:
            log.warning("duplicate %s entry %r ignored", name, v)
        else:
            out.append(v)
    return tuple(out)


def parse_config(source, base_dir=None, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Validate a JSON config (a path or an already-parsed dict) and fill defaults.

    ``seed``/``out`` override the file's values when given.
    """
    if isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        base_dir = path.parent if base_dir is None else base_dir
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for key in raw:
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")

    data = raw.get("data")
    csv_path = synthetic = None
    if isinstance(data, str):
        data = {"csv": data}
    if not isinstance(data, dict) or len(data) != 1 or not ({"csv", "synthetic"} & set(data)):
        raise ConfigError("data must be a CSV path or an object with exactly one of 'csv' or 'synthetic'")
    if "csv" in data:
        csv_path = Path(data["csv"])
        if not csv_path.is_absolute() and base_dir is not None:
            csv_path = Path(base_dir) / csv_path
        csv_path = str(csv_path)
    else:
        synthetic = dict(data["synthetic"] or {})
        for key in synthetic:
            if key not in _SYNTH_KEYS:
                raise ConfigError(f"unknown key data.synthetic.{key!r}")

    if "pollutants" not in raw:
        raise ConfigError("config needs at least one pollutant")
    pollutants = _dedupe(_str_list(raw["pollutants"], "pollutants"), "pollutant")
    if not pollutants:
        raise ConfigError("config needs at least one pollutant")
    for p in pollutants:
        if p not in POLLUTANTS:
            raise ConfigError(f"unknown pollutant {p!r}; valid: {', '.join(POLLUTANTS)}")

    horizons = raw.get("horizons", [24])
    if isinstance(horizons, int):
        horizons = [horizons]
    valid = "{" + ",".join(str(h) for h in VALID_HORIZONS) + "}"
    if not isinstance(horizons, list) or not horizons:
        raise ConfigError(f"horizons must be a non-empty list drawn from {valid}")
    for h in horizons:
        if isinstance(h, bool) or h not in VALID_HORIZONS:
            raise ConfigError(f"invalid horizon {h!r}; valid horizons are {valid}")
    horizons = _dedupe(horizons, "horizon")

    stations = raw.get("stations")
    if stations is not None:
        stations = _dedupe(_str_list(stations, "stations"), "station")
        if not stations:
            raise ConfigError("stations, when given, must name at least one station")

    preset = raw.get("preset", "ptc")
    comparison_preset(preset)
    presets = raw.get("presets")
    if presets is not None:
        presets = _dedupe(_str_list(presets, "presets"), "preset")
        for p in presets:
            comparison_preset(p)

    threshold = raw.get("prune_threshold")
    if threshold is not None and not (isinstance(threshold, (int, float)) and 0.0 <= threshold < 1.0):
        raise ConfigError("prune_threshold must lie in [0, 1)")
    metric = raw.get("importance_metric", "count")
    if metric not in ("count", "gain"):
        raise ConfigError("importance_metric must be 'count' or 'gain'")

    kw = {}
    for key, kind in (("include_calendar", bool), ("aux_pollutants", bool), ("shared_test_period", bool)):
        if key in raw:
            if not isinstance(raw[key], kind):
                raise ConfigError(f"{key} must be a boolean")
            kw[key] = raw[key]
    for key in ("max_absent_fraction", "train_fraction", "validation_fraction"):
        if key in raw:
            if not isinstance(raw[key], (int, float)) or isinstance(raw[key], bool):
                raise ConfigError(f"{key} must be a number")
            kw[key] = float(raw[key])
    if "n_noise_features" in raw:
        if not isinstance(raw["n_noise_features"], int) or raw["n_noise_features"] < 0:
            raise ConfigError("n_noise_features must be a non-negative integer")
        kw["n_noise_features"] = raw["n_noise_features"]
    if "holidays" in raw:
        kw["holidays"] = tuple(_str_list(raw["holidays"], "holidays"))
    if "extra_lag_pollutants" in raw:
        kw["extra_lag_pollutants"] = _dedupe(_str_list(raw["extra_lag_pollutants"], "extra_lag_pollutants"),
                                             "extra lag pollutant")

    file_seed = raw.get("seed", 0)
    if not isinstance(file_seed, int) or isinstance(file_seed, bool) or file_seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    try:
        cfg = ExperimentConfig(
            pollutants=pollutants,
            csv_path=csv_path,
            synthetic=synthetic,
            stations=stations,
            horizons=tuple(horizons),
            horizons_given="horizons" in raw,
            preset=preset,
            presets=presets,
            prune_threshold=None if threshold is None else float(threshold),
            importance_metric=metric,
            training=_overrides(TrainingConfig, TrainingConfig(), raw.get("training"), "training"),
            cascade=_overrides(CascadeConfig, CascadeConfig(dtype="float32"), raw.get("cascade"), "cascade"),
            gbt=_overrides(GBTConfig, GBTConfig(), raw.get("gbt"), "gbt"),
            seed=file_seed if seed is None else int(seed),
            out=str(raw.get("out", "aircorrect-run")) if out is None else str(out),
            **kw,
        )
        SplitSpec(cfg.train_fraction)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config: {e}") from None
    return cfg


# ----------------------------------------------------------------------------
# Data
# ----------------------------------------------------------------------------

def synthetic_tables(spec: dict, seed: int = 0) -> dict[str, StationTable]:
    """Synthetic stations; station ``k`` uses generator seed ``seed + k``."""
    spec = dict(spec or {})
    bias = BiasSpec(float(spec.get("offset", 15.0)), float(spec.get("scale", 1.1)),
                    float(spec.get("noise_sd", 3.0)))
    names = spec.get("stations", ["S1"])
    if isinstance(names, int):
        names = [f"S{k + 1}" for k in range(names)]
    base = int(spec.get("seed", seed))
    kw = {"start": spec["start"]} if "start" in spec else {}
    return {
        name: generate_synthetic(base + k, int(spec.get("n_hours", 4000)), bias, station_id=name, **kw)
        for k, name in enumerate(names)
    }


def load_tables(config: ExperimentConfig) -> dict[str, StationTable]:
    if config.synthetic is not None:
        tables = synthetic_tables(config.synthetic, config.seed)
    else:
        tables = {sid: impute_missing(t, config.max_absent_fraction)
                  for sid, t in load_stations(config.csv_path).items()}
    if config.stations is None:
        return tables
    missing = [s for s in config.stations if s not in tables]
    for s in missing:
        log.warning("station %r not found in the data; skipped", s)
    return {s: tables[s] for s in config.stations if s in tables}


# ----------------------------------------------------------------------------
# Running cells
# ----------------------------------------------------------------------------

@dataclass
class CellOutcome:
    station: str
    pollutant: str
    horizon: int
    results: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def key(self) -> str:
        return f"{_safe(self.station)}_{self.pollutant}_h{self.horizon}"


@dataclass
class RunArtifacts:
    out_dir: Path
    command: str
    config: ExperimentConfig
    presets: tuple
    cells: list = field(default_factory=list)
    files: dict = field(default_factory=dict)
    bundles: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def failures(self) -> list:
        return [f for c in self.cells for f in c.failures]

    @property
    def n_results(self) -> int:
        return sum(len(c.results) for c in self.cells)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", str(name))


def _failure(cell: CellOutcome, preset, err: Exception) -> dict:
    return {"station": cell.station, "pollutant": cell.pollutant, "horizon_h": cell.horizon,
            "model": preset, "error": type(err).__name__, "message": str(err)}


def run_cell(table: StationTable, pollutant: str, horizon: int, presets, config: ExperimentConfig) -> CellOutcome:
    """Run every preset on one cell, recording failures instead of raising."""
    cell_out = CellOutcome(table.station_id, pollutant, horizon)
    settings = config.settings()
    min_row = max(config.horizons) + N_LAGS if config.shared_test_period else 0
    try:
        cell = prepare_cell(table, pollutant, horizon, settings, min_target_row=min_row)
    except (AirCorrectError, ValueError, FloatingPointError) as e:
        log.error("cell %s/%s/%dh failed during preparation: %s", table.station_id, pollutant, horizon, e)
        cell_out.failures.append(_failure(cell_out, None, e))
        return cell_out
    for preset in presets:
        try:
            cell_out.results[preset] = run_preset(cell, preset, settings)
        except (AirCorrectError, ValueError, FloatingPointError) as e:
            log.error("cell %s/%s/%dh preset %s failed: %s", table.station_id, pollutant, horizon, preset, e)
            cell_out.failures.append(_failure(cell_out, preset, e))
    return cell_out


def thread_cap() -> int:
    raw = os.environ.get("AIRCORRECT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"AIRCORRECT_THREADS must be an integer, got {raw!r}") from None
    return max(n, 1)


def _run(config: ExperimentConfig, presets, command: str, horizons=None) -> RunArtifacts:
    horizons = tuple(horizons or config.horizons)
    if horizons != config.horizons:
        config = replace(config, horizons=horizons)
    out_dir = Path(config.out)
    art = RunArtifacts(out_dir, command, config, tuple(presets))
    tables = load_tables(config)
    jobs = [(tables[s], p, h) for s in tables for p in config.pollutants for h in horizons]
    if not jobs:
        art.warnings.append("empty run set: no (station, pollutant, horizon) cells to run")
        log.warning(art.warnings[-1])
    n_threads = min(thread_cap(), max(len(jobs), 1))
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            art.cells = list(pool.map(lambda j: run_cell(*j, presets, config), jobs))
    else:
        art.cells = [run_cell(*j, presets, config) for j in jobs]
    # bundles and reports are written serially, in cell order
    for cell in art.cells:
        for preset, res in cell.results.items():
            if res.model is not None:
                path = save_bundle(res.model, out_dir / "bundles" / f"{cell.key}_{preset}.json")
                art.bundles.append(path)
    emit_report(art)
    return art


def run_experiment(config: ExperimentConfig) -> RunArtifacts:
    """Train and evaluate ``config.preset`` on every cell, then write the report."""
    return _run(config, (config.preset,), "train")


def run_comparison(config: ExperimentConfig) -> RunArtifacts:
    """All comparison presets (or ``config.presets``) on identical splits and seeds."""
    return _run(config, config.presets or COMPARISON_PRESETS, "compare")


def horizon_sweep(config: ExperimentConfig) -> RunArtifacts:
    """Metrics at every configured horizon (all valid horizons when none were given)."""
    horizons = config.horizons if config.horizons_given else VALID_HORIZONS
    presets = config.presets or _dedupe((config.preset, "cmaq24_raw", "persistence"), "preset")
    return _run(config, presets, "sweep", horizons)


# ----------------------------------------------------------------------------
# Report files
# ----------------------------------------------------------------------------

def fmt(x) -> str:
    """Shortest round-tripping text for a number."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def metrics_row(station, pollutant, horizon, model, m) -> list:
    return [station, pollutant, str(horizon), model, fmt(m.mae), fmt(m.rmse), fmt(m.r2),
            fmt(m.eps_base), fmt(m.eps_model), fmt(m.accuracy_improvement), fmt(m.n_points)]


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


_COLORS = ("#000000", "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2")


def svg_lines(series: dict, title: str, x=None, width=900, height=360) -> str:
    """Static SVG with one ``<polyline>`` per named series."""
    pad = 40
    arrays = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    n = max((len(v) for v in arrays.values()), default=0)
    xs = np.arange(n, dtype=float) if x is None else np.asarray(x, dtype=float)
    finite = [v[np.isfinite(v)] for v in arrays.values() if v.size]
    lo = min((float(v.min()) for v in finite if v.size), default=0.0)
    hi = max((float(v.max()) for v in finite if v.size), default=1.0)
    if hi <= lo:
        hi = lo + 1.0
    x0, x1 = (float(xs.min()), float(xs.max())) if n else (0.0, 1.0)
    if x1 <= x0:
        x1 = x0 + 1.0

    def px(i, v):
        return (pad + (xs[i] - x0) / (x1 - x0) * (width - 2 * pad),
                height - pad - (v - lo) / (hi - lo) * (height - 2 * pad))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<title>{_xml(title)}</title>',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{pad}" y="20" font-size="13">{_xml(title)}</text>',
           f'<text x="4" y="{pad}" font-size="10">{hi:.4g}</text>',
           f'<text x="4" y="{height - pad}" font-size="10">{lo:.4g}</text>']
    for k, (name, v) in enumerate(arrays.items()):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in (px(i, v[i]) for i in range(len(v)) if np.isfinite(v[i])))
        out.append(f'<polyline data-series="{_xml(name)}" fill="none" stroke="{color}" '
                   f'stroke-width="1" points="{pts}"/>')
        out.append(f'<text x="{width - pad - 120}" y="{pad + 14 * k}" font-size="11" fill="{color}">'
                   f'{_xml(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _xml(s) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _mae_rows(art: RunArtifacts) -> list:
    rows = []
    for preset in art.presets:
        for cell in art.cells:
            res = cell.results.get(preset)
            if res is not None:
                rows.append([preset, str(cell.horizon), cell.station, cell.pollutant, fmt(res.test.mae)])
    return rows


def emit_report(art: RunArtifacts) -> Path:
    """Write metrics, importance, predictions, plots and the manifest for a run."""
    out = art.out_dir
    out.mkdir(parents=True, exist_ok=True)
    files = []
    test_rows, train_rows = [], []
    for cell in art.cells:
        for preset in art.presets:
            res: PresetResult | None = cell.results.get(preset)
            if res is None:
                continue
            test_rows.append(metrics_row(cell.station, cell.pollutant, cell.horizon, preset, res.test))
            if res.train is not None:
                train_rows.append(metrics_row(cell.station, cell.pollutant, cell.horizon, preset, res.train))
            if res.model is not None:
                for which in ("temporal", "weather"):
                    rep = res.model.importance(which, art.config.importance_metric)
                    if rep is not None:
                        rows = [(n, str(c), fmt(f)) for n, c, f in rep.rows()]
                        files.append(_write_csv(out / "importance" / f"{cell.key}_{preset}_{which}.csv",
                                                ("feature", "count", "fraction"), rows))
        if cell.results:
            first = next(iter(cell.results.values()))
            names = [p for p in art.presets if p in cell.results]
            header = ["target_time", "observed"] + names
            rows = []
            for i, ts in enumerate(first.target_times):
                rows.append([format_timestamp(int(ts)), fmt(first.observed[i])]
                            + [fmt(cell.results[p].predictions[i]) for p in names])
            files.append(_write_csv(out / "predictions" / f"{cell.key}.csv", header, rows))
            series = {"truth": first.observed}
            series.update({p: cell.results[p].predictions for p in names})
            files.append(_write_text(out / "plots" / f"{cell.key}.svg",
                                     svg_lines(series, f"{cell.station} {cell.pollutant} {cell.horizon} h test period")))
    if art.cells or not art.warnings:
        files.append(_write_csv(out / "metrics.csv", METRICS_HEADER, test_rows))
        files.append(_write_csv(out / "metrics_train.csv", METRICS_HEADER, train_rows))
    if art.command in ("compare", "sweep") and art.cells:
        mrows = _mae_rows(art)
        files.append(_write_csv(out / "mae_by_horizon.csv", SWEEP_HEADER, mrows))
        series = {}
        horizons = sorted({c.horizon for c in art.cells})
        for preset in art.presets:
            means = []
            for h in horizons:
                vals = [float(r[4]) for r in mrows if r[0] == preset and int(r[1]) == h]
                means.append(float(np.mean(vals)) if vals else math.nan)
            series[preset] = means
        files.append(_write_text(out / "plots" / "mae_by_horizon.svg",
                                 svg_lines(series, "test MAE by horizon (h)", x=horizons)))
    files.extend(art.bundles)
    art.files = {str(Path(p).relative_to(out)): sha256_file(p) for p in files}
    manifest = {
        "command": art.command,
        "config": art.config.echo(),
        "presets": list(art.presets),
        "cells": [{"station": c.station, "pollutant": c.pollutant, "horizon_h": c.horizon,
                   "models": sorted(c.results), "failed": bool(c.failures)} for c in art.cells],
        "failures": art.failures,
        "warnings": art.warnings,
        "files": dict(sorted(art.files.items())),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def verify_manifest(out_dir) -> list:
    """Files whose current hash differs from the manifest (missing files included)."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    bad = []
    for rel, digest in manifest["files"].items():
        p = out_dir / rel
        if not p.exists() or sha256_file(p) != digest:
            bad.append(rel)
    return bad


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
