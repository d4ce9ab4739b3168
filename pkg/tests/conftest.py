import numpy as np
import pytest

from tlmn.features import MeteoSeries
from tlmn.ingest import SyntheticConfig, synth_generate
from tlmn.network import ModelConfig

SMALL = ModelConfig(
    window_len=8, n_features=3, embed_k=2, channels=4, conv_kernel=3, dilations=(1, 2), head_hidden=3
)


def pytest_addoption(parser):
    parser.addoption("--run-network", action="store_true", help="run tests that reach the NASA POWER API")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-network"):
        return
    skip = pytest.mark.skip(reason="needs --run-network")
    for item in items:
        if "network" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def small_config():
    return SMALL


@pytest.fixture(scope="session")
def synth_two_years():
    return synth_generate(SyntheticConfig(seed=11, start_year=2021, n_years=2, step_transients_per_year=5))


def constant_series(start: str, hours: int, **overrides) -> MeteoSeries:
    ts = np.datetime64(start, "s") + np.arange(hours) * np.timedelta64(3600, "s")
    cols = dict(ghi=0.0, dni=0.0, dhi=0.0, t2m=25.0, rh=30.0, ws=3.0, ps=97.0)
    cols.update(overrides)
    return MeteoSeries(ts, *(np.full(hours, float(cols[f])) for f in ("ghi", "dni", "dhi", "t2m", "rh", "ws", "ps")))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def record(number, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
