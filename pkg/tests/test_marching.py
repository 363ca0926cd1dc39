import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_slab_case
from sthdg.errors import InvalidInitialCondition, NoConvergence, SlabError
from sthdg.marching import (
    SlabProblem, TraceField, _relative_delta, extract_trace, march, picard_slab, project_initial,
)
from sthdg.mesh import CellKind, SinusoidalMotion, move_mesh, triangulate_unit_square
from sthdg.problems import make_problem, vortex_initial


@pytest.fixture(scope="module")
def moved_mesh():
    return move_mesh(triangulate_unit_square(4), SinusoidalMotion(), 0.3)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_projection_keeps_discrete_divergence_free_polynomials(moved_mesh, k):
    # a globally divergence-free polynomial of degree k is its own projection
    def u0(x):
        a, b = x[..., 0], x[..., 1]
        return np.stack([a ** k + b, -k * a ** (k - 1) * b + a], axis=-1)

    tr = project_initial(u0, moved_mesh, k)
    assert tr.l2_error(u0) < 1e-12
    assert tr.divergence_max() < 1e-11
    assert tr.normal_jump_max() < 1e-11


@pytest.mark.parametrize("k", [1, 2])
def test_projection_of_smooth_field_is_hdiv(moved_mesh, k):
    tr = project_initial(vortex_initial, moved_mesh, k)
    assert tr.divergence_max() < 1e-10
    assert tr.normal_jump_max() < 1e-10
    coarse = project_initial(vortex_initial, move_mesh(triangulate_unit_square(2), SinusoidalMotion(), 0.3), k)
    assert tr.l2_error(vortex_initial) < coarse.l2_error(vortex_initial)


def test_projection_rejects_divergent_field(moved_mesh):
    with pytest.raises(InvalidInitialCondition):
        project_initial(lambda x: x.copy(), moved_mesh, 1)
    # the check can be turned off
    project_initial(lambda x: x.copy(), moved_mesh, 1, check=False)


def test_trace_energy_of_constant_field(moved_mesh):
    tr = project_initial(lambda x: np.broadcast_to([1.0, 2.0], x.shape).copy(), moved_mesh, 2)
    assert tr.energy() == pytest.approx(5.0 * moved_mesh.areas().sum(), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0.1, 10))
def test_relative_delta_policy(a, b, s):
    new, old, seed = np.array([a]), np.array([b]), np.zeros(1)
    d = _relative_delta(new, old, seed)
    if a == 0.0:
        assert d == (0.0 if b == 0.0 else float("inf"))
    else:
        assert d == pytest.approx(abs(a - b) / abs(a))
    assert _relative_delta(new * s, new * s, seed) == 0.0


def slab_problem(case="manufactured", nx=2, k=2, nu=1e-3):
    pb, slab, ev, layout, dvals = make_slab_case(case, nx=nx, k=k, nu=nu)
    exact = pb.exact
    trace = project_initial(exact.at_time(slab.t0), slab.bottom, k) if exact else None
    return pb, SlabProblem(ev, layout, nu, 6.0 * k * k, f=pb.f, g=pb.data.neumann, trace=trace,
                           dirichlet_values=dvals)


def test_uniform_flow_converges_immediately():
    _, problem = slab_problem("uniform-flow")
    state, status, system = picard_slab(problem, 1e-12)
    assert status.converged and status.iterations <= 2
    assert np.allclose(state.U[:, 0, 0] / state.U[:, 1, 0], 2.0)


def test_picard_history_and_status():
    _, problem = slab_problem()
    state, status, _ = picard_slab(problem, 1e-10)
    assert status.converged
    assert status.criterion in ("tol", "roundoff")
    assert len(status.history) == status.iterations
    assert status.factorizations >= 1
    assert {"factorization", "solve", "back_substitution"} <= set(status.timings)


def test_stokes_seed_reaches_same_fixed_point():
    _, problem = slab_problem()
    a = picard_slab(problem, 1e-12)[0]
    b = picard_slab(problem, 1e-12, stokes_seed=True)[0]
    assert np.abs(a.U - b.U).max() < 1e-8 * np.abs(a.U).max()


def test_no_convergence_is_raised():
    _, problem = slab_problem()
    with pytest.raises(NoConvergence) as info:
        picard_slab(problem, 1e-14, max_iters=1)
    assert info.value.status.iterations == 1


def test_picard_rejects_bad_arguments():
    _, problem = slab_problem(nx=1, k=1)
    with pytest.raises(ValueError):
        picard_slab(problem, 0.0)


@pytest.fixture(scope="module")
def short_march():
    pb = make_problem("manufactured", nx=2, nu=1e-3)
    return pb, march(pb, 2, 1e-3, 3, 0.05)


def test_trace_handoff(short_march):
    _, result = short_march
    recs = result.records
    assert recs[0].trace_in is result.initial_trace
    for a, b in zip(recs, recs[1:]):
        assert b.trace_in is a.trace_out
        assert b.slab.t0 == a.slab.t1
        assert np.array_equal(b.slab.bottom.vertices, a.slab.top.vertices)
    assert result.final_trace.time == pytest.approx(0.15)


def test_march_first_slab_equals_picard(short_march):
    pb, result = short_march
    rec = result.records[0]
    from sthdg.dofs import build_layout, interpolate_dirichlet
    from sthdg.forms import prepare

    ev = prepare(rec.slab, 2)
    layout = build_layout(rec.slab, 2)
    problem = SlabProblem(ev, layout, 1e-3, 24.0, f=pb.f, g=pb.data.neumann, trace=rec.trace_in,
                          dirichlet_values=interpolate_dirichlet(layout, pb.data, rec.slab))
    state = picard_slab(problem, 1e-12)[0]
    assert np.abs(state.U - rec.state.U).max() < 1e-12 * np.abs(state.U).max()
    out = extract_trace(ev, state)
    assert np.allclose(out.coeffs, rec.trace_out.coeffs)


def test_march_records(short_march):
    _, result = short_march
    assert len(result.records) == 3
    assert all(r.facet_residual < 1e-11 for r in result.records)
    assert result.timings["mesh"] >= 0 and result.timings["factorization"] > 0


def test_march_wraps_slab_errors():
    pb = make_problem("manufactured", nx=1, nu=1e-3)
    with pytest.raises(SlabError) as info:
        march(pb, 1, 1e-3, 2, 0.05, tol=1e-14, max_iters=1)
    assert info.value.slab_index == 0
    assert isinstance(info.value.cause, NoConvergence)


def test_zero_trace_without_initial_data():
    tr = TraceField(triangulate_unit_square(1), 0.0, 1, np.zeros((2, 2, 3)))
    assert tr.energy() == 0.0 and tr.divergence_max() == 0.0


def test_trace_handoff_is_exact(short_march):
    # the top restriction of a slab is a P_k polynomial per triangle, so the handoff loses nothing
    _, result = short_march
    rec = result.records[0]
    from sthdg.forms import prepare

    ev = prepare(rec.slab, 2)
    grp = next(g for g in ev.groups if g.kind == CellKind.TOP)
    top = np.einsum("gcn,gqn->gqc", rec.state.U[grp.cells], grp.tphi)
    handed = rec.trace_out.evaluate_reference(grp.prism, grp.chi)
    assert np.abs(top - handed).max() < 1e-12 * np.abs(top).max()
