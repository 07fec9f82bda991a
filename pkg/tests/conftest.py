import numpy as np
import pytest

from dyadiclab.domain import DomainModel
from dyadiclab.grid import build_adjacent_family, build_mesh
from dyadiclab.tents import TentTree

# acceptance outcomes, filled by tests/test_acceptance.py and printed at the end
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def disc():
    return DomainModel(1)


@pytest.fixture(scope="session")
def ball2():
    return DomainModel(2)


@pytest.fixture(scope="session")
def small_family(disc):
    """Three adjacent grids on a 16384-point circle, depth 3."""
    mesh = build_mesh(disc, 16384, 0)
    return build_adjacent_family(disc, mesh, 0.125, 3, 3, 0)


@pytest.fixture(scope="session")
def small_tree(small_family):
    return TentTree(small_family)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
