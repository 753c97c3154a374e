import numpy as np
import pytest

from spdefp.drift import drift_catalog
from spdefp.spectral import build_space, identity_noise

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def space8():
    return build_space(8, 16)


@pytest.fixture
def noise8(space8):
    return identity_noise(space8)


@pytest.fixture
def cubic():
    return drift_catalog("cubic", a=1.0, alpha=0.25, T=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
