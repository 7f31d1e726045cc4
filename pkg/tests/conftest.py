import numpy as np
import pytest

from hnpgof.dataio import load_csv

import acceptance_log


@pytest.fixture(scope="session")
def spider():
    return load_csv("spider")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
