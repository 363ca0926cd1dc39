import numpy as np
import pytest

from sthdg.dofs import build_layout, interpolate_dirichlet
from sthdg.forms import prepare
from sthdg.mesh import extrude_slab, move_mesh
from sthdg.problems import make_problem


def make_slab_case(case="manufactured", nx=2, k=2, t0=0.1, dt=0.05, nu=1e-3):
    pb = make_problem(case, nx=nx, nu=nu)
    bottom = move_mesh(pb.reference_mesh, pb.motion, t0)
    top = move_mesh(pb.reference_mesh, pb.motion, t0 + dt)
    slab = extrude_slab(bottom, top, t0, t0 + dt)
    ev = prepare(slab, k)
    layout = build_layout(slab, k)
    return pb, slab, ev, layout, interpolate_dirichlet(layout, pb.data, slab)


@pytest.fixture(scope="session")
def small_case():
    return make_slab_case()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
