import numpy as np
import pytest
from hypothesis import settings

from csgd.objectives import make_classification_rows, make_least_squares, make_logistic

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def ls_online():
    return make_least_squares(10, 10, seed=7, noise_std=0.01)


@pytest.fixture(scope="session")
def ls_finite():
    return make_least_squares(10, 10, seed=7, noise_std=0.01, samples_per_worker=100)


@pytest.fixture(scope="session")
def logistic():
    return make_logistic(make_classification_rows(1000, 10, seed=3), 10, 0.0005, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    def record(line: str) -> None:
        print(line)
        ACCEPTANCE_LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
