import numpy as np
import pytest

from kerodeepc import experiments as ex
from kerodeepc.config import ExperimentConfig


@pytest.fixture(scope="session")
def study_cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def study_data(study_cfg):
    """Product dataset of the Van der Pol study (Tu = Tx = 20, N = 10)."""
    return ex.build_product_data(study_cfg)


@pytest.fixture(scope="session")
def study_pred(study_cfg, study_data):
    return ex.fit_product_cfg(study_cfg, study_data.dataset)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, shift=1.0):
    A = rng.standard_normal((n, n))
    return A.T @ A + shift * np.eye(n)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
