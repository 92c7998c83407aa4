import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evohom.effective import build_effective_table  # noqa: E402
from evohom.geometry import DEFAULT_GEOMETRY  # noqa: E402
from evohom.mesh import build_collar_mesh  # noqa: E402


@pytest.fixture(scope="session")
def geom():
    return DEFAULT_GEOMETRY


@pytest.fixture(scope="session")
def coarse_cell_mesh():
    return build_collar_mesh(0.35, 0.05, 0.1)


@pytest.fixture(scope="session")
def small_table():
    """16 radii on a coarse mesh; enough for macro-level unit tests."""
    return build_effective_table(grid_size=16, h=0.05, n_probe=0)


@pytest.fixture(scope="session")
def default_table():
    """64 radii at the default cell mesh size, with the build time recorded in ``meta``."""
    t0 = time.perf_counter()
    table = build_effective_table(grid_size=64)
    table.meta["build_seconds"] = time.perf_counter() - t0
    return table


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
