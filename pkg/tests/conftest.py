import numpy as np
import pytest

from leraylab import fields as fl
from leraylab import nse, structure
from leraylab.fields import Grid
from leraylab.stokes import TimeMesh

LADDER = (0.4, 0.2, 0.1)
CHECKPOINTS = (0.25, 0.5, 1.0)


@pytest.fixture(scope="session")
def grid():
    return Grid(12.0, 32)


@pytest.fixture(scope="session")
def constants(grid):
    return nse.measure_constants(grid, seed=0, n_fields=50, eps=LADDER)


@pytest.fixture(scope="session")
def bump(grid):
    # centred bump data used by the separation and sweep checks
    return fl.bump_field(grid, radius=3.0, amplitude=1.0)


@pytest.fixture(scope="session")
def sweep(grid, bump):
    return structure.eps_sweep(grid, bump, LADDER, TimeMesh.uniform(1.0, 40), CHECKPOINTS)


@pytest.fixture(scope="session")
def rng():
    return np.random.Generator(np.random.Philox(1234))


_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[_LINES]

    def record(k, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
        lines.append((k, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
