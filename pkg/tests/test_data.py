import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aircorrect.data import (
    BASE_COLUMNS,
    BiasSpec,
    ScalerParams,
    SplitSpec,
    StationTable,
    build_temporal_windows,
    build_weather_matrix,
    chronological_split,
    cmaq_column,
    fit_minmax,
    generate_synthetic,
    impute_missing,
    inverse_transform,
    load_station_csv,
    load_stations,
    transform,
    write_station_csv,
)
from aircorrect.errors import (
    ConfigError,
    ConsistencyError,
    DataQualityError,
    DegenerateFeatureError,
    EmptyDatasetError,
    ParseError,
    SchemaError,
)
from conftest import toy_table

HOUR = 3600


def _write(tmp_path, header, rows):
    path = tmp_path / "s.csv"
    lines = [",".join(header)] + [",".join(r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def _row(ts, value="1.0"):
    return [ts, "A"] + [value] * (len(BASE_COLUMNS) - 2)


def _stamp(k):
    return f"2020-01-01T{k:02d}:00:00Z"


# ---- CSV ingestion ---------------------------------------------------------

def test_three_row_file_parses_in_order(tmp_path):
    path = _write(tmp_path, BASE_COLUMNS, [_row(_stamp(k), str(k + 1.5)) for k in range(3)])
    table = load_station_csv(path)
    assert len(table) == 3
    assert table.station_id == "A"
    np.testing.assert_array_equal(table["pm25"], [1.5, 2.5, 3.5])
    assert np.all(np.diff(table.timestamps) == HOUR)


def test_missing_pm25_column_is_named(tmp_path):
    header = [c for c in BASE_COLUMNS if c != "pm25"]
    path = _write(tmp_path, header, [])
    with pytest.raises(SchemaError) as err:
        load_station_csv(path)
    assert "pm25" in str(err.value)
    assert err.value.missing == ["pm25"]


def test_bad_cell_reports_file_line_number(tmp_path):
    rows = [_row(_stamp(k)) for k in range(8)]
    rows[6][BASE_COLUMNS.index("no2")] = "abc"
    path = _write(tmp_path, BASE_COLUMNS, rows)
    with pytest.raises(ParseError) as err:
        load_station_csv(path)
    # data row 7 sits on file line 8 behind the header
    assert err.value.line == 8
    assert "line 8" in str(err.value)


def test_empty_cells_are_absent_not_zero(tmp_path):
    rows = [_row(_stamp(k)) for k in range(3)]
    rows[1][BASE_COLUMNS.index("so2")] = ""
    table = load_station_csv(_write(tmp_path, BASE_COLUMNS, rows))
    assert math.isnan(table["so2"][1])
    assert table["so2"][0] == 1.0


def test_multi_station_file_splits_by_station(tmp_path):
    rows = [_row(_stamp(k)) for k in range(2)] + [[_stamp(k), "B"] + ["2.0"] * (len(BASE_COLUMNS) - 2)
                                                  for k in range(3)]
    tables = load_stations(_write(tmp_path, BASE_COLUMNS, rows))
    assert list(tables) == ["A", "B"]
    assert len(tables["B"]) == 3
    with pytest.raises(DataQualityError):
        load_station_csv(tmp_path / "s.csv")


def test_csv_round_trip_is_lossless(tmp_path, small_table):
    path = tmp_path / "rt.csv"
    write_station_csv([small_table], path)
    back = load_station_csv(path)
    np.testing.assert_array_equal(back.timestamps, small_table.timestamps)
    for name, col in small_table.columns.items():
        np.testing.assert_array_equal(back[name], col)


# ---- imputation ------------------------------------------------------------

def _series_table(values):
    values = np.asarray(values, dtype=float)
    t = toy_table(len(values))
    cols = {k: np.where(np.isnan(values), np.nan, v) if k == "pm25" else v for k, v in t.columns.items()}
    cols["pm25"] = values
    return StationTable("T1", t.timestamps, cols)


def test_forward_fill_interior_gaps():
    out = impute_missing(_series_table([5, np.nan, np.nan, 7]), max_absent_fraction=0.6)
    np.testing.assert_array_equal(out["pm25"], [5, 5, 5, 7])


def test_leading_absent_rows_dropped():
    out = impute_missing(_series_table([np.nan, 3, 4]), max_absent_fraction=0.5)
    np.testing.assert_array_equal(out["pm25"], [3, 4])
    assert len(out.timestamps) == 2


def test_absent_fraction_over_threshold_raises():
    vals = np.arange(10, dtype=float)
    vals[[1, 4, 7]] = np.nan  # 30% absent
    with pytest.raises(DataQualityError):
        impute_missing(_series_table(vals))
    assert len(impute_missing(_series_table(vals), max_absent_fraction=0.35)) == 10


def test_missing_timestamps_are_reinserted_and_filled():
    t = toy_table(6)
    keep = np.array([0, 1, 3, 4, 5])
    gappy = t.take(keep)
    out = impute_missing(gappy)
    assert len(out) == 6
    assert np.all(np.diff(out.timestamps) == HOUR)
    assert out["pm25"][2] == t["pm25"][1]


# ---- scaling ---------------------------------------------------------------

def test_fit_minmax_extrema():
    assert fit_minmax([2, 4, 6]) == ScalerParams(2.0, 6.0)
    assert fit_minmax([-1, 0, 1]) == ScalerParams(-1.0, 1.0)
    with pytest.raises(DegenerateFeatureError):
        fit_minmax([5, 5, 5])


def test_transform_examples():
    p = ScalerParams(2.0, 6.0)
    np.testing.assert_array_equal(transform([2, 4, 6], p), [0.0, 0.5, 1.0])
    assert transform([8], p)[0] == 1.5
    x = np.array([0.3, 7.7])
    q = fit_minmax(x)
    np.testing.assert_allclose(inverse_transform(transform(x, q), q), x, rtol=1e-12, atol=0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30))
def test_scaler_round_trip_property(values):
    arr = np.asarray(values)
    if arr.min() == arr.max():
        return
    p = fit_minmax(arr)
    s = p.transform(arr)
    assert s.min() == 0.0 and s.max() == 1.0
    np.testing.assert_allclose(p.inverse_transform(s), arr, rtol=1e-12, atol=1e-12 * (p.max - p.min))


# ---- windows ---------------------------------------------------------------

def test_window_count_100_rows_h24():
    ds, scalers = build_temporal_windows(toy_table(100), "pm25", 24)
    assert len(ds) == 52
    assert ds.inputs.shape == (52, 27)
    assert ds.feature_names[:2] == ("D1", "D2") and ds.feature_names[-3:] == ("cmaq_24h", "cmaq_48h", "cmaq_72h")
    assert set(scalers) == set(ds.feature_names) | {"target"}


def test_window_too_short():
    with pytest.raises(EmptyDatasetError):
        build_temporal_windows(toy_table(30), "pm25", 24)


def test_constant_pollutant_is_degenerate():
    with pytest.raises(DegenerateFeatureError):
        build_temporal_windows(toy_table(100, pollutant_values=np.full(100, 4.0)), "pm25", 24)


@pytest.mark.parametrize("h", [6, 12, 24, 48, 72])
def test_windows_are_causal(h):
    """Every lag precedes the issue hour t - h; forecasts are those valid at t."""
    table = toy_table(200)
    ds, sc = build_temporal_windows(table, "pm25", h)
    raw_lags = sc["D1"].inverse_transform(ds.inputs[:, 0])
    obs = np.asarray(table["pm25"])
    # the ramp makes the row index recoverable from the value
    lag_rows = raw_lags - obs[0]
    np.testing.assert_allclose(lag_rows, ds.rows - h - 24, atol=1e-9)
    last = sc["D24"].inverse_transform(ds.inputs[:, 23]) - obs[0]
    np.testing.assert_allclose(last, ds.rows - h - 1, atol=1e-9)
    assert np.all(last < ds.rows - h + 1e-9)
    c24 = sc["cmaq_24h"].inverse_transform(ds.inputs[:, 24])
    np.testing.assert_allclose(c24, np.asarray(table[cmaq_column("pm25", 24)])[ds.rows], rtol=1e-12)
    np.testing.assert_allclose(sc["target"].inverse_transform(ds.targets), obs[ds.rows], rtol=1e-12)


def test_scalers_use_training_portion_only():
    table = toy_table(200)
    ds, sc = build_temporal_windows(table, "pm25", 24)
    n_train = SplitSpec().n_train(len(ds))
    assert ds.targets[:n_train].max() == 1.0
    assert ds.targets[n_train:].min() > 1.0


def test_min_target_row_aligns_horizons():
    table = toy_table(300)
    a, _ = build_temporal_windows(table, "pm25", 6, min_target_row=96)
    b, _ = build_temporal_windows(table, "pm25", 72, min_target_row=96)
    np.testing.assert_array_equal(a.target_times, b.target_times)


def test_noise_features_appended():
    ds, _ = build_temporal_windows(toy_table(200), "pm25", 24, n_noise_features=3, noise_seed=1)
    assert ds.feature_names[-3:] == ("noise_1", "noise_2", "noise_3")


# ---- weather ---------------------------------------------------------------

def test_weather_rows_align_and_lag_24h():
    table = toy_table(100)
    ds, _ = build_temporal_windows(table, "pm25", 24)
    wm = build_weather_matrix(table, ds)
    assert len(wm) == 52
    sc = wm.scalers["max_t"]
    np.testing.assert_allclose(sc.inverse_transform(wm.values[:, 0]),
                               np.asarray(table["max_t"])[ds.rows - 24], rtol=1e-12)


def test_calendar_one_hot_and_weekend():
    table = toy_table(24 * 14)
    ds, _ = build_temporal_windows(table, "pm25", 24)
    wm = build_weather_matrix(table, ds, include_calendar=True)
    names = list(wm.feature_names)
    dow = wm.values[:, names.index("dow_mon"):names.index("dow_sun") + 1]
    assert dow.shape[1] == 7
    np.testing.assert_array_equal(dow.sum(axis=1), 1.0)
    # 2016-01-03 was a Sunday
    sunday = (ds.target_times - 1_451_779_200) // 86400 % 7 == 0
    assert sunday.any()
    np.testing.assert_array_equal(wm.values[sunday, names.index("weekend_holiday")], 1.0)


def test_holiday_flag():
    table = toy_table(24 * 8)
    ds, _ = build_temporal_windows(table, "pm25", 24)
    wm = build_weather_matrix(table, ds, include_calendar=True, holidays=["2016-01-05"])
    flag = wm.values[:, wm.feature_names.index("weekend_holiday")]
    day = (ds.target_times - 1_451_606_400) // 86400
    assert np.all(flag[day == 4] == 1.0)
    assert np.all(flag[day == 5] == 0.0)  # Wednesday


def test_weather_from_other_station_is_inconsistent():
    table = toy_table(100)
    ds, _ = build_temporal_windows(table, "pm25", 24)
    other = toy_table(100, station="T2")
    with pytest.raises(ConsistencyError):
        build_weather_matrix(other, ds)


# ---- split -----------------------------------------------------------------

@pytest.mark.parametrize("n,expect", [(10, 8), (5, 4)])
def test_chronological_split_counts(n, expect):
    ds, _ = build_temporal_windows(toy_table(48 + n), "pm25", 24, split=SplitSpec(0.5))
    assert len(ds) == n
    train, test = chronological_split(ds, SplitSpec(0.8))
    assert (len(train), len(test)) == (expect, n - expect)
    np.testing.assert_array_equal(np.concatenate([train.rows, test.rows]), ds.rows)


def test_split_fraction_validated():
    with pytest.raises(ConfigError):
        SplitSpec(1.2)


# ---- synthetic generator ---------------------------------------------------

def test_synthetic_deterministic():
    a = generate_synthetic(5, 300)
    b = generate_synthetic(5, 300)
    for k in a.columns:
        np.testing.assert_array_equal(a[k], b[k])


def test_noiseless_offset_exact():
    t = generate_synthetic(2, 300, BiasSpec(10.0, 1.0, 0.0))
    diff = t[cmaq_column("pm25", 24)] - t["pm25"]
    np.testing.assert_allclose(diff, 10.0, rtol=0, atol=1e-12)


def test_offset_recovered_within_sampling_bound():
    t = generate_synthetic(1, 500, BiasSpec(15.0, 1.0, 3.0))
    mean_diff = float(np.mean(t[cmaq_column("pm25", 24)] - t["pm25"]))
    assert abs(mean_diff - 15.0) < 3 * 3.0 / math.sqrt(500)


def test_synthetic_minimum_length():
    with pytest.raises(ConfigError):
        generate_synthetic(1, 100)
