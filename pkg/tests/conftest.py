import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from sl2lab.grid import ProjGrid
from sl2lab.measures import reference_measure
from sl2lab.mobius import GroupElement, ProjPoint

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ORACLES = json.loads((Path(__file__).parent / "oracles.json").read_text())

finite = st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False)


@st.composite
def group_elements(draw, scale: float = 1.0):
    """Random SL2(C) elements: identity plus a random complex perturbation, rescaled to unit determinant."""
    entries = [complex(draw(finite), draw(finite)) * scale for _ in range(4)]
    m = np.array(entries).reshape(2, 2) + np.eye(2)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) < 1e-2:
        m = m + np.diag([1.0, -1.0]) * 0.5 + np.eye(2) * 0.5j
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if abs(det) < 1e-2:
            return GroupElement.rotation(draw(finite))
    return GroupElement(m / np.sqrt(det))


@st.composite
def proj_points(draw):
    v = np.array([complex(draw(finite), draw(finite)) for _ in range(2)])
    if np.linalg.norm(v) < 1e-3:
        v = v + np.array([1.0, 0.5j])
    return ProjPoint(v)


@st.composite
def unit_vectors(draw):
    return draw(proj_points()).v


@pytest.fixture(scope="session")
def mu_ref():
    return reference_measure()


@pytest.fixture(scope="session")
def grid32():
    return ProjGrid(32)


@pytest.fixture(scope="session")
def grid64():
    return ProjGrid(64)


@pytest.fixture(scope="session")
def grid256():
    return ProjGrid(256)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
