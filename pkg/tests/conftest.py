import numpy as np
import pytest

from guidedflow.tensor import precision


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
