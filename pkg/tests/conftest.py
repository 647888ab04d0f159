from __future__ import annotations

import pytest

from dynbif.branch import BranchControls, build_global_branch
from dynbif.nonlinearity import PowerLaw
from dynbif.spectral import Interval, Rectangle, build_domain


@pytest.fixture(scope="session")
def line16():
    return build_domain(Interval(), 16)


@pytest.fixture(scope="session")
def square16():
    return build_domain(Rectangle(), 16)


@pytest.fixture(scope="session")
def cubic():
    return PowerLaw(alpha=-1.0, p=3.0)


@pytest.fixture(scope="session")
def cubic_sub():
    return PowerLaw(alpha=1.0, p=3.0)


@pytest.fixture(scope="session")
def super_graph(line16, cubic):
    """Supercritical pitchfork from the first eigenvalue, out to lam = 51."""
    return build_global_branch(line16, cubic, 1.0, BranchControls(window=(0.5, 51.0), seed=0))


@pytest.fixture(scope="session")
def sub_graph(line16, cubic_sub):
    return build_global_branch(line16, cubic_sub, 1.0, BranchControls(window=(-49.0, 1.5), seed=0))
