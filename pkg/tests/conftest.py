import numpy as np
import pytest

from trimode.model import ModelParams

_acceptance_outcomes = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _acceptance_outcomes[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_acceptance_outcomes):
        outcome = _acceptance_outcomes[nodeid]
        label = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"{label:7s} {nodeid.split('::')[-1]}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


@pytest.fixture
def default_params():
    return ModelParams(gn=1.0, q=1.0, r=0.0, n_atoms=100)


def random_states(rng, n):
    """Normalized classical amplitude triples, uniform on the 5-sphere."""
    y = rng.normal(size=(n, 6))
    y /= np.linalg.norm(y, axis=1, keepdims=True)
    return y[:, 0::2] + 1j * y[:, 1::2]
