import numpy as np
import pytest

from aircorrect.data import BiasSpec, StationTable, generate_synthetic


@pytest.fixture(scope="session")
def small_table() -> StationTable:
    return generate_synthetic(3, 700, BiasSpec(15.0, 1.1, 3.0))


def toy_table(n, pollutant_values=None, station="T1", start=1_451_606_400):
    """Hourly table with every required column; values are deterministic ramps."""
    from aircorrect.data import METEOROLOGY, POLLUTANTS, FORECAST_LEADS, HOUR, cmaq_column
    t = np.arange(n, dtype=float)
    cols = {}
    for k, p in enumerate(POLLUTANTS):
        cols[p] = 10.0 + k + t if pollutant_values is None or p != "pm25" else np.asarray(pollutant_values, float)
        for lead in FORECAST_LEADS:
            cols[cmaq_column(p, lead)] = cols[p] + lead / 24.0
    for k, m in enumerate(METEOROLOGY):
        cols[m] = 1.0 + k + np.sin(t / 5.0 + k) + 2.0
    return StationTable(station, start + HOUR * np.arange(n, dtype=np.int64), cols)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
