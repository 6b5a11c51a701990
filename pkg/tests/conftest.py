import warnings

import numpy as np
import pytest

from fpeps.update import IllConditionedGaugeWarning


@pytest.fixture(autouse=True)
def _quiet_gauge_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedGaugeWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
