import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gpeadapt.fem import FeSpace, Problem  # noqa: E402
from gpeadapt.mesh import DomainSpec, build_initial_mesh  # noqa: E402
from gpeadapt.potential import parse_potential  # noqa: E402

# filled by test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def problem(domain, potential="0", beta=0.0):
    return Problem(domain, parse_potential(potential), beta)


@pytest.fixture
def unit_square():
    return DomainSpec.rectangle(0, 1, 0, 1)


@pytest.fixture
def one_dof_space(unit_square):
    """(0,1)^2 with h = 1/2: a single interior vertex at the centre."""
    return FeSpace(build_initial_mesh(unit_square, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
