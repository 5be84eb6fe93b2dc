import numpy as np
import pytest

from ltrcsm.market_data import PricePanel, synthetic_panel
from ltrcsm.tuning import PanelContext


def make_panel(close, start="2000-01-03", assets=None):
    close = np.asarray(close, dtype=float)
    dates = np.busday_offset(np.datetime64(start, "D"), np.arange(close.shape[0]), roll="forward")
    assets = assets or tuple(f"X{j}" for j in range(close.shape[1]))
    return PricePanel(dates.astype("datetime64[D]"), tuple(assets), close)


@pytest.fixture(scope="session")
def small_panel():
    return synthetic_panel(40, 6, 1.0, seed=11)


@pytest.fixture(scope="session")
def small_ctx(small_panel):
    return PanelContext(small_panel)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
