"""Station data ingestion, imputation, scaling and supervised window building."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    ConsistencyError,
    DataQualityError,
    DegenerateFeatureError,
    EmptyDatasetError,
    ParseError,
    SchemaError,
)

log = logging.getLogger(__name__)

POLLUTANTS = ("co", "so2", "pm25", "no2", "o3_1h", "o3_8h")
METEOROLOGY = ("max_t", "min_t", "max_h", "min_h", "max_ws", "min_ws", "ap", "rain")
FORECAST_LEADS = (24, 48, 72)
BASE_COLUMNS = ("timestamp", "station_id") + POLLUTANTS + METEOROLOGY
VALID_HORIZONS = (6, 12, 24, 48, 72)
N_LAGS = 24
WEATHER_LAG_HOURS = 24
# temperatures are the only columns allowed to go negative
SIGNED_COLUMNS = frozenset({"max_t", "min_t"})
HOUR = 3600


def cmaq_column(pollutant: str, lead: int) -> str:
    return f"cmaq{lead}_{pollutant}"


def parse_timestamp(text: str) -> int:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return int(stamp.timestamp())


def format_timestamp(epoch: int) -> str:
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StationTable:
    """Hourly records for one station.

    ``columns`` maps column name to a float array aligned with ``timestamps``
    (UTC epoch seconds). Absent cells are NaN.
    """

    station_id: str
    timestamps: np.ndarray
    columns: Mapping[str, np.ndarray]

    def __post_init__(self):
        _readonly(self.timestamps)
        for arr in self.columns.values():
            if len(arr) != len(self.timestamps):
                raise ConsistencyError("column length differs from timestamp count")
            _readonly(arr)

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def column_names(self) -> tuple:
        return tuple(self.columns)

    def forecast_pollutants(self) -> tuple:
        """Pollutants that carry a complete 24/48/72 h forecast triple."""
        return tuple(
            p for p in POLLUTANTS
            if all(cmaq_column(p, lead) in self.columns for lead in FORECAST_LEADS)
        )

    def take(self, index) -> "StationTable":
        cols = {k: np.array(v[index]) for k, v in self.columns.items()}
        return StationTable(self.station_id, np.array(self.timestamps[index]), cols)

    def with_columns(self, **extra: np.ndarray) -> "StationTable":
        cols = dict(self.columns)
        cols.update({k: np.asarray(v, dtype=float).copy() for k, v in extra.items()})
        return StationTable(self.station_id, np.array(self.timestamps), cols)


# ----------------------------------------------------------------------------
# CSV input/output
# ----------------------------------------------------------------------------

def _check_header(header: Sequence[str]) -> list[str]:
    missing = [c for c in BASE_COLUMNS if c not in header]
    if missing:
        raise SchemaError(missing)
    extra = [c for c in header if c not in BASE_COLUMNS]
    for name in extra:
        ok = any(name == cmaq_column(p, lead) for p in POLLUTANTS for lead in FORECAST_LEADS)
        if not ok:
            log.warning("ignoring unknown column %r", name)
    return [c for c in header if c != "timestamp" and c != "station_id" and
            (c in BASE_COLUMNS or c.startswith("cmaq"))]


def load_stations(path) -> dict[str, StationTable]:
    """Parse a station CSV into one table per ``station_id`` (file order kept)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(BASE_COLUMNS) from None
        value_cols = _check_header(header)
        pos = {name: header.index(name) for name in header}
        stamps: dict[str, list[int]] = {}
        values: dict[str, dict[str, list[float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(lineno, "<row>", ",".join(row))
            raw_ts = row[pos["timestamp"]]
            try:
                ts = parse_timestamp(raw_ts)
            except ValueError:
                raise ParseError(lineno, "timestamp", raw_ts) from None
            sid = row[pos["station_id"]].strip()
            stamps.setdefault(sid, []).append(ts)
            bucket = values.setdefault(sid, {c: [] for c in value_cols})
            for name in value_cols:
                cell = row[pos[name]].strip()
                if not cell:
                    bucket[name].append(math.nan)
                    continue
                try:
                    val = float(cell)
                except ValueError:
                    raise ParseError(lineno, name, cell) from None
                if not math.isfinite(val):
                    raise ParseError(lineno, name, cell)
                if val < 0 and name not in SIGNED_COLUMNS:
                    raise DataQualityError(f"line {lineno}: negative value {name}={cell}")
                bucket[name].append(val)
    return {
        sid: StationTable(
            sid,
            np.asarray(stamps[sid], dtype=np.int64),
            {k: np.asarray(v, dtype=float) for k, v in values[sid].items()},
        )
        for sid in stamps
    }


def load_station_csv(path, station_id: str | None = None) -> StationTable:
    tables = load_stations(path)
    if station_id is not None:
        try:
            return tables[station_id]
        except KeyError:
            raise DataQualityError(f"station {station_id!r} not present in {path}") from None
    if len(tables) != 1:
        raise DataQualityError(
            f"{path} holds {len(tables)} stations; pass station_id to pick one"
        )
    return next(iter(tables.values()))


def write_station_csv(tables: Iterable[StationTable], path) -> None:
    tables = list(tables)
    extra = []
    for table in tables:
        for p in table.forecast_pollutants():
            for lead in FORECAST_LEADS:
                name = cmaq_column(p, lead)
                if name not in extra:
                    extra.append(name)
    header = list(BASE_COLUMNS) + extra
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for table in tables:
            for i, ts in enumerate(table.timestamps):
                row = [format_timestamp(ts), table.station_id]
                for name in header[2:]:
                    col = table.columns.get(name)
                    val = math.nan if col is None else float(col[i])
                    row.append("" if math.isnan(val) else repr(val))
                writer.writerow(row)


# ----------------------------------------------------------------------------
# Imputation
# ----------------------------------------------------------------------------

def impute_missing(table: StationTable, max_absent_fraction: float = 0.25) -> StationTable:
    """Regularise to an hourly grid, forward-fill gaps and drop incomplete leading rows."""
    ts = np.asarray(table.timestamps, dtype=np.int64)
    if len(ts) == 0:
        raise EmptyDatasetError(f"station {table.station_id}: no rows")
    if np.any(np.diff(ts) <= 0):
        raise DataQualityError(f"station {table.station_id}: timestamps not strictly increasing")
    if np.any((ts - ts[0]) % HOUR):
        raise DataQualityError(f"station {table.station_id}: timestamps off the hourly grid")

    grid = np.arange(ts[0], ts[-1] + 1, HOUR, dtype=np.int64)
    slot = (ts - ts[0]) // HOUR
    cols = {}
    for name, col in table.columns.items():
        full = np.full(len(grid), np.nan)
        full[slot] = col
        absent = np.isnan(full).mean()
        if absent > max_absent_fraction:
            raise DataQualityError(
                f"station {table.station_id}: column {name} is {absent:.0%} absent "
                f"(limit {max_absent_fraction:.0%})"
            )
        cols[name] = _ffill(full)

    complete = np.ones(len(grid), dtype=bool)
    for col in cols.values():
        complete &= ~np.isnan(col)
    if not complete.any():
        raise EmptyDatasetError(f"station {table.station_id}: no complete row")
    start = int(np.argmax(complete))
    out = StationTable(table.station_id, grid[start:].copy(), {k: v[start:].copy() for k, v in cols.items()})
    if len(out) > 1 and np.any(np.diff(out.timestamps) != HOUR):
        raise ConsistencyError("hourly stride lost during imputation")
    return out


def _ffill(values: np.ndarray) -> np.ndarray:
    idx = np.where(np.isnan(values), 0, np.arange(len(values)))
    np.maximum.accumulate(idx, out=idx)
    out = values[idx]
    # leading gaps stay NaN: index 0 itself may be NaN
    return out


# ----------------------------------------------------------------------------
# Min-max scaling
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalerParams:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise DegenerateFeatureError(f"degenerate scaler: min={self.min} max={self.max}")

    def transform(self, values):
        return (np.asarray(values, dtype=float) - self.min) / (self.max - self.min)

    def inverse_transform(self, scaled):
        return np.asarray(scaled, dtype=float) * (self.max - self.min) + self.min

    def to_dict(self) -> dict:
        return {"min": self.min, "max": self.max}


def fit_minmax(values, name: str = "feature") -> ScalerParams:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise EmptyDatasetError(f"cannot fit scaler for {name}: no values")
    if not np.all(np.isfinite(arr)):
        raise DataQualityError(f"cannot fit scaler for {name}: non-finite values")
    lo, hi = float(arr.min()), float(arr.max())
    if lo == hi:
        raise DegenerateFeatureError(f"feature {name!r} is constant ({lo}) over the fit range")
    return ScalerParams(lo, hi)


def transform(values, params: ScalerParams):
    return params.transform(values)


def inverse_transform(scaled, params: ScalerParams):
    return params.inverse_transform(scaled)


# ----------------------------------------------------------------------------
# Windowed datasets
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    mode: str = "chronological"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.mode != "chronological":
            raise ConfigError(f"unsupported split mode {self.mode!r}")

    def n_train(self, n: int) -> int:
        return int(math.floor(self.train_fraction * n))


@dataclass(frozen=True)
class WindowedDataset:
    """Scaled supervised pairs for one (station, pollutant, horizon).

    ``rows`` holds the table row index of each target so that other
    row-aligned data (weather, raw forecasts) can be recovered.
    """

    inputs: np.ndarray
    targets: np.ndarray
    feature_names: tuple
    horizon_hours: int
    pollutant: str
    station_id: str
    rows: np.ndarray
    target_times: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    def take(self, index) -> "WindowedDataset":
        return replace(
            self,
            inputs=self.inputs[index],
            targets=self.targets[index],
            rows=self.rows[index],
            target_times=self.target_times[index],
        )

    def select_features(self, keep: Sequence[int]) -> "WindowedDataset":
        keep = list(keep)
        return replace(
            self,
            inputs=self.inputs[:, keep],
            feature_names=tuple(self.feature_names[i] for i in keep),
        )


@dataclass(frozen=True)
class WeatherMatrix:
    values: np.ndarray
    feature_names: tuple
    rows: np.ndarray
    target_times: np.ndarray
    scalers: Mapping[str, ScalerParams] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def take(self, index) -> "WeatherMatrix":
        return replace(self, values=self.values[index], rows=self.rows[index],
                       target_times=self.target_times[index])

    def select_features(self, keep: Sequence[int]) -> "WeatherMatrix":
        keep = list(keep)
        return replace(self, values=self.values[:, keep],
                       feature_names=tuple(self.feature_names[i] for i in keep))


def lag_feature_names(prefix: str = "D") -> list[str]:
    return [f"{prefix}{k}" for k in range(1, N_LAGS + 1)]


def window_rows(n_rows: int, horizon: int) -> np.ndarray:
    """Table rows that can serve as targets: the oldest lag is t - horizon - 24."""
    return np.arange(horizon + N_LAGS, n_rows, dtype=np.int64)


def build_temporal_windows(
    table: StationTable,
    pollutant: str,
    horizon_hours: int,
    split: SplitSpec = SplitSpec(),
    extra_lag_pollutants: Sequence[str] = (),
    n_noise_features: int = 0,
    noise_seed: int = 0,
    min_target_row: int = 0,
) -> tuple[WindowedDataset, dict[str, ScalerParams]]:
    """Build the 27-feature temporal pattern for one pollutant and horizon.

    For a target at row ``t`` the lags D1..D24 are the observations at rows
    ``t-h-24 .. t-h-1`` (everything strictly before the issue hour ``t-h``),
    and the forecast features are the 24/48/72 h model values valid at ``t``.
    Scalers are fitted on the chronological training portion only.
    ``min_target_row`` lets several horizons share one set of target times.
    """
    if horizon_hours not in VALID_HORIZONS:
        raise ConfigError(f"horizon {horizon_hours} not in {VALID_HORIZONS}")
    if pollutant not in table.columns:
        raise SchemaError([pollutant])
    missing = [cmaq_column(pollutant, lead) for lead in FORECAST_LEADS
               if cmaq_column(pollutant, lead) not in table.columns]
    if missing:
        raise SchemaError(missing)

    rows = window_rows(len(table), horizon_hours)
    rows = rows[rows >= min_target_row]
    if len(rows) == 0:
        raise EmptyDatasetError(
            f"{len(table)} rows cannot supply a sample at horizon {horizon_hours} "
            f"(need more than {N_LAGS + horizon_hours})"
        )
    offsets = np.arange(-horizon_hours - N_LAGS, -horizon_hours)
    lag_index = rows[:, None] + offsets[None, :]

    blocks = [np.asarray(table[pollutant])[lag_index]]
    names = lag_feature_names()
    for other in extra_lag_pollutants:
        if other == pollutant:
            continue
        blocks.append(np.asarray(table[other])[lag_index])
        names += lag_feature_names(f"{other}_D")
    for lead in FORECAST_LEADS:
        blocks.append(np.asarray(table[cmaq_column(pollutant, lead)])[rows][:, None])
        names.append(f"cmaq_{lead}h")
    if n_noise_features:
        rng = np.random.default_rng(noise_seed)
        blocks.append(rng.standard_normal((len(rows), n_noise_features)))
        names += [f"noise_{k}" for k in range(1, n_noise_features + 1)]
    raw = np.hstack(blocks)
    raw_targets = np.asarray(table[pollutant])[rows]
    if not np.all(np.isfinite(raw)) or not np.all(np.isfinite(raw_targets)):
        raise DataQualityError("absent values inside windows; run impute_missing first")

    n_train = split.n_train(len(rows))
    if n_train == 0:
        raise EmptyDatasetError("training portion is empty")
    scalers: dict[str, ScalerParams] = {}
    scaled = np.empty_like(raw)
    for j, name in enumerate(names):
        sc = fit_minmax(raw[:n_train, j], name)
        scalers[name] = sc
        scaled[:, j] = sc.transform(raw[:, j])
    scalers["target"] = fit_minmax(raw_targets[:n_train], f"{pollutant} target")
    dataset = WindowedDataset(
        inputs=scaled,
        targets=scalers["target"].transform(raw_targets),
        feature_names=tuple(names),
        horizon_hours=horizon_hours,
        pollutant=pollutant,
        station_id=table.station_id,
        rows=rows,
        target_times=np.asarray(table.timestamps)[rows],
    )
    return dataset, scalers


def weather_feature_names(table: StationTable) -> list[str]:
    return [c for c in METEOROLOGY if c in table.columns]


def build_weather_matrix(
    table: StationTable,
    dataset: WindowedDataset,
    include_calendar: bool = False,
    holidays: Iterable[str] = (),
    aux_pollutants: bool = False,
    split: SplitSpec = SplitSpec(),
) -> WeatherMatrix:
    """Meteorology observed 24 h before each target, optionally with calendar flags.

    Weather columns that are constant over the training portion carry no
    information and are dropped with a warning.
    """
    if dataset.station_id != table.station_id:
        raise ConsistencyError("dataset and table come from different stations")
    rows = np.asarray(dataset.rows)
    if len(rows) and (rows.max() >= len(table) or rows.min() < WEATHER_LAG_HOURS):
        raise ConsistencyError("dataset rows fall outside the table")
    if not np.array_equal(np.asarray(table.timestamps)[rows], dataset.target_times):
        raise ConsistencyError("dataset target times do not match the table")

    src = rows - WEATHER_LAG_HOURS
    names = weather_feature_names(table)
    if aux_pollutants:
        names += [p for p in POLLUTANTS if p in table.columns and p != dataset.pollutant]
    n_train = split.n_train(len(rows))
    cols, kept, scalers = [], [], {}
    for name in names:
        raw = np.asarray(table[name])[src]
        try:
            sc = fit_minmax(raw[:n_train], name)
        except DegenerateFeatureError:
            log.warning("dropping constant weather column %s", name)
            continue
        scalers[name] = sc
        cols.append(sc.transform(raw))
        kept.append(name)

    if include_calendar:
        holiday_days = {parse_timestamp(d + "T00:00:00Z") // 86400 for d in holidays}
        days = dataset.target_times // 86400
        # 1970-01-01 was a Thursday; Monday = 0
        dow = (days + 3) % 7
        for k, label in enumerate(("mon", "tue", "wed", "thu", "fri", "sat", "sun")):
            cols.append((dow == k).astype(float))
            kept.append(f"dow_{label}")
        is_holiday = np.array([d in holiday_days for d in days], dtype=bool)
        cols.append(((dow >= 5) | is_holiday).astype(float))
        kept.append("weekend_holiday")

    values = np.column_stack(cols) if cols else np.zeros((len(rows), 0))
    return WeatherMatrix(values, tuple(kept), rows.copy(), np.asarray(dataset.target_times).copy(), scalers)


def chronological_split(data, spec: SplitSpec = SplitSpec()):
    """First ``floor(fraction * n)`` samples train, the remainder test; no shuffling."""
    if not isinstance(spec, SplitSpec):
        spec = SplitSpec(float(spec))
    n = len(data)
    if n == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    k = spec.n_train(n)
    return data.take(slice(0, k)), data.take(slice(k, n))


# ----------------------------------------------------------------------------
# Synthetic data
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class BiasSpec:
    offset: float = 15.0
    scale: float = 1.1
    noise_sd: float = 3.0


# (typical level, diurnal peak hour)
_POLLUTANT_PROFILE = {
    "co": (1.0, 8),
    "so2": (20.0, 10),
    "pm25": (60.0, 8),
    "no2": (40.0, 19),
    "o3_1h": (80.0, 15),
    "o3_8h": (70.0, 16),
}


def _ar1(rng, n, phi, sd):
    """Stationary AR(1) with marginal standard deviation ``sd``."""
    shocks = rng.standard_normal(n) * sd * math.sqrt(1.0 - phi * phi)
    out = np.empty(n)
    out[0] = rng.standard_normal() * sd
    for t in range(1, n):
        out[t] = phi * out[t - 1] + shocks[t]
    return out


def generate_synthetic(
    seed: int,
    n_hours: int,
    bias: BiasSpec | tuple = BiasSpec(),
    station_id: str = "S1",
    start: str = "2016-01-01T00:00:00Z",
) -> StationTable:
    """Deterministic station table with a known forecast bias.

    Truth per pollutant is a positive persistent AR(1) anomaly plus a diurnal
    cycle plus a weather response; the forecast at lead ``h`` is
    ``scale * truth + offset + N(0, noise_sd * sqrt(h / 24))``.
    """
    if n_hours < 200:
        raise ConfigError("n_hours must be at least 200")
    if not isinstance(bias, BiasSpec):
        bias = BiasSpec(*bias)
    rng = np.random.default_rng(seed)
    t0 = parse_timestamp(start)
    stamps = t0 + HOUR * np.arange(n_hours, dtype=np.int64)
    hour = (stamps // HOUR) % 24
    doy = (stamps // 86400) % 365
    season = np.sin(2 * np.pi * (doy - 110) / 365.0)

    # shared smooth weather drivers
    z_press = _ar1(rng, n_hours, 0.995, 1.0)
    z_temp = _ar1(rng, n_hours, 0.99, 1.0)
    z_hum = _ar1(rng, n_hours, 0.99, 1.0)
    z_wind = _ar1(rng, n_hours, 0.98, 1.0)
    z_rain = _ar1(rng, n_hours, 0.95, 1.0)
    temp = 16 + 9 * season + 3 * z_temp - 1.5 * z_press + 4 * np.sin(2 * np.pi * (hour - 9) / 24)
    hum = np.clip(65 + 12 * z_hum - 4 * z_temp, 5, 98)
    wind = 0.3 + np.log1p(np.exp(1.5 + 1.2 * z_wind))
    rain = np.maximum(0.0, z_rain + 0.5 * z_hum - 1.2) * 3.0
    cols = {
        "max_t": temp + 2.5,
        "min_t": temp - 2.5,
        "max_h": np.minimum(100.0, hum + 6),
        "min_h": np.maximum(0.0, hum - 6),
        "max_ws": wind * 1.6,
        "min_ws": wind * 0.4,
        "ap": 1012 + 7 * z_press - 0.2 * (temp - 16),
        "rain": rain,
    }

    regional = _ar1(rng, n_hours, 0.99, 1.0)
    for name in POLLUTANTS:
        level, peak = _POLLUTANT_PROFILE[name]
        local = _ar1(rng, n_hours, 0.99, 1.0)
        shape = (
            1.0
            + 0.30 * regional
            + 0.15 * local
            + 0.15 * np.cos(2 * np.pi * (hour - peak) / 24)
            - 0.10 * z_wind
            - 0.08 * z_press
        )
        truth = level * np.maximum(shape, 0.05)
        cols[name] = truth
        for lead in FORECAST_LEADS:
            noise = rng.standard_normal(n_hours) * bias.noise_sd * math.sqrt(lead / 24.0)
            # concentrations cannot be negative; only binds for tiny offsets
            cols[cmaq_column(name, lead)] = np.maximum(bias.scale * truth + bias.offset + noise, 0.0)
    return StationTable(station_id, stamps, cols)
