import random

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kqd.lattice import build_heavy_hex, induced_sublattice

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_REPORT: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_REPORT):
            terminalreporter.write_line(line)


def random_connected_subgraph(lat, n, rng):
    start = int(rng.integers(lat.n_sites))
    sites = {start}
    while len(sites) < n:
        frontier = sorted({v for u in sites for v in lat.neighbors[u]} - sites)
        sites.add(int(rng.choice(frontier)))
    return induced_sublattice(lat, sorted(sites)).lattice


def random_target_sites(lat, k, rng, control=None):
    """Control site plus up to k pairwise non-adjacent particles."""
    if control is None:
        control = int(rng.integers(lat.n_sites))
    order = [int(s) for s in rng.permutation(lat.n_sites) if s != control]
    parts = []
    for s in order:
        if len(parts) < k and all(not lat.has_edge(s, p) for p in parts):
            parts.append(s)
    return control, tuple(sorted(parts))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def hex12():
    return build_heavy_hex(1, 1)


@pytest.fixture(scope="session")
def hex21():
    return build_heavy_hex(1, 2)
