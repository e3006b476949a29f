"""Session-wide fixtures: full-horizon reference runs shared by the
acceptance gate (each takes a noticeable fraction of a second, so they
are computed once)."""

from __future__ import annotations

import pytest

from overbook import benchmark
from overbook.simulator import replicate, run


@pytest.fixture(scope="session")
def det_full():
    return run(benchmark.deterministic_scenario(seed=0))


@pytest.fixture(scope="session")
def poisson_full():
    return run(benchmark.poisson_scenario(seed=0))


@pytest.fixture(scope="session")
def det_reps():
    return replicate(benchmark.deterministic_scenario(seed=0), 10)


@pytest.fixture(scope="session")
def poisson_reps():
    return replicate(benchmark.poisson_scenario(seed=0), 10)
