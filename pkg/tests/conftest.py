"""Shared small meshes and assembled systems."""

import numpy as np
import pytest

from hdgbi import meshgen
from hdgbi.bi import GreensContext, assemble_bi, assemble_rhs
from hdgbi.hdg import assemble_hdg
from hdgbi.mesh import build_skeleton
from hdgbi.physics import PlaneWave

F0 = 0.3e9


@pytest.fixture(scope="session")
def wave():
    return PlaneWave(F0)


@pytest.fixture(scope="session")
def tet_skeleton():
    return build_skeleton(meshgen.single_tet(), radiating_tags=[meshgen.RADIATING_TAG])


@pytest.fixture(scope="session")
def two_tet_skeleton():
    return build_skeleton(meshgen.two_tets(scale=0.3), radiating_tags=[meshgen.RADIATING_TAG])


@pytest.fixture(scope="session")
def ball_skeleton():
    return build_skeleton(meshgen.ball_mesh(0.2, 3), radiating_tags=[meshgen.RADIATING_TAG])


@pytest.fixture(scope="session")
def ball_system(ball_skeleton, wave):
    """HDG and BI systems of a small eps_r = 2 ball."""
    hdg = assemble_hdg(ball_skeleton, 2.0, 1.0, wave.k0)
    bi = assemble_bi(ball_skeleton, GreensContext(wave.k0))
    b = np.concatenate(assemble_rhs(ball_skeleton, wave))
    return hdg, bi, b


def random_complex(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


ACCEPTANCE_LINES = []


@pytest.fixture()
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(ACCEPTANCE_LINES[-1])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
