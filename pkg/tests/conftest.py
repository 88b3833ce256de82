from __future__ import annotations

import numpy as np
import pytest

from feec_proj.fe_space import DiscreteComplex
from feec_proj.mesh import unit_cube_kuhn, unit_square_crisscross


@pytest.fixture(scope="session")
def square2():
    return unit_square_crisscross(2)


@pytest.fixture(scope="session")
def square4():
    return unit_square_crisscross(4)


@pytest.fixture(scope="session")
def cube1():
    return unit_cube_kuhn(1)


@pytest.fixture(scope="session")
def complexes():
    """Discrete complexes keyed by (mesh, N, family, r), built once per session."""
    cache = {}

    def get(mesh, N, family, r):
        key = (mesh, N, family, r)
        if key not in cache:
            cx = unit_square_crisscross(N) if mesh == "square" else unit_cube_kuhn(N)
            cache[key] = DiscreteComplex.from_family(cx, family, r)
        return cache[key]
    return get


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def whitney_ops(complexes):
    """WhitneyOperators keyed like `complexes`, built once per session."""
    from feec_proj.whitney_ops import WhitneyOperators
    cache = {}

    def get(mesh, N, family, r):
        key = (mesh, N, family, r)
        if key not in cache:
            cache[key] = WhitneyOperators(complexes(*key))
        return cache[key]
    return get


@pytest.fixture(scope="session")
def projections(complexes, whitney_ops):
    """CochainProjection (stages kept) keyed like `complexes`, built once per session."""
    from feec_proj.cochain_projection import CochainProjection
    cache = {}

    def get(mesh, N, family, r):
        key = (mesh, N, family, r)
        if key not in cache:
            cache[key] = CochainProjection(complexes(*key), whitney_ops(*key), keep_stages=True)
        return cache[key]
    return get


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one summary line per acceptance criterion; shown in the terminal summary."""
    def log(line):
        print(line)
        ACCEPTANCE_LINES.append(line)
    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
