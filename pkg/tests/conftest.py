import numpy as np
import pytest

from parawave.grid import build_grids


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid44():
    return build_grids(4, 4)


def two_inclusion_element(grid, element=0, value=50.0):
    """Coefficients with two disjoint high-contrast blocks inside one element."""
    c = np.ones(grid.n_cells)
    cells = grid.element_cells(element).reshape(grid.refine, grid.refine)
    c[cells[0:1, 0:1].ravel()] = value
    c[cells[2:3, 2:3].ravel()] = value
    return c


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" in nodeid and rep.when == "call":
                lines.append((nodeid.split("::", 1)[1], "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}")
