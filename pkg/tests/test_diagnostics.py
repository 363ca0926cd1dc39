import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sthdg.cli import main
from sthdg.diagnostics import (
    CaseConfig, DiagnosticsReport, _rate, certificates, rate_table, rates_csv, read_vtk_point_data, run_case,
    sample_cells, write_slab_fields,
)
from sthdg.forms import prepare
from sthdg.mesh import write_triangulation, triangulate_unit_square
from sthdg.problems import manufactured, manufactured_solution, neumann_data, uniform_flow, vortex_initial


def fd(fun, X, axis, h=1e-5):
    e = np.zeros(3)
    e[axis] = h
    return (fun(X + e) - fun(X - e)) / (2 * h)


@pytest.mark.parametrize("nu", [1e-4, 1.0])
def test_manufactured_forcing_matches_equations(nu):
    ex = manufactured(nu)
    X = np.random.default_rng(0).random((20, 3))
    u = ex.u(X)
    grad = np.stack([fd(ex.u, X, 1), fd(ex.u, X, 2)], axis=-1)  # d u_i / d x_j
    assert np.allclose(grad, ex.grad_u(X), atol=1e-8)
    lap = sum((ex.u(X + h) - 2 * u + ex.u(X - h)) / 1e-6 for h in (np.array([0, 1e-3, 0]), np.array([0, 0, 1e-3])))
    gp = np.stack([fd(ex.p, X, 1), fd(ex.p, X, 2)], axis=-1)
    f = fd(ex.u, X, 0) + np.einsum("gij,gj->gi", grad, u) - nu * lap + gp
    assert np.allclose(f, ex.f(X), atol=1e-5)
    assert np.allclose(np.trace(ex.grad_u(X), axis1=1, axis2=2), 0.0, atol=1e-14)


def test_manufactured_solution_helper():
    u, p, f, g = manufactured_solution(0.0, np.array([0.3]), np.array([0.6]))
    assert np.allclose(u, 0.0)
    assert p[0] == pytest.approx(3 * np.sin(0.3 * np.pi) * np.cos(0.6 * np.pi))
    # at x1 = 1 with zero velocity the traction is the pressure times the normal
    _, p1, _, g1 = manufactured_solution(0.0, 1.0, 0.4)
    assert np.allclose(g1, [p1, 0.0], atol=1e-15)


def test_neumann_data_uses_inflow_part_only():
    ex = uniform_flow((1.0, 0.0))
    g = neumann_data(ex, 1.0)
    X = np.zeros((1, 3))
    assert np.allclose(g(X, np.array([[0.0, 1.0, 0.0]])), 0.0)  # outflow
    assert np.allclose(g(X, np.array([[0.0, -1.0, 0.0]])), [[-1.0, 0.0]])  # inflow


def test_vortex_initial_is_divergence_free_and_vanishes_on_boundary():
    x = np.random.default_rng(1).random((30, 2))
    h = 1e-6
    div = ((vortex_initial(x + [h, 0]) - vortex_initial(x - [h, 0]))[:, 0]
           + (vortex_initial(x + [0, h]) - vortex_initial(x - [0, h]))[:, 1]) / (2 * h)
    assert np.abs(div).max() < 1e-6
    edge = np.column_stack([np.zeros(5), np.linspace(0, 1, 5)])
    assert np.allclose(vortex_initial(edge), 0.0)


@settings(max_examples=20)
@given(st.floats(1e-8, 1.0))
def test_rate_of_equal_errors_is_zero(e):
    assert _rate(e, e) == 0.0
    assert _rate(e, e / 4) == pytest.approx(2.0)
    assert _rate(None, e) is None and _rate(0.0, e) is None


def fake_report(nx, err):
    return DiagnosticsReport(case="manufactured", k=2, nx=nx, slabs=nx, dt=1.0 / nx, nu=1e-4, alpha=24.0,
                             ale=False, cells_per_slab=6 * nx * nx, final_time=1.0, err_u_T=err, err_p_T=err,
                             err_u_E=err, err_p_E=err, energies=[1.0, 0.9, 0.9 + 1e-14])


def test_rate_table_and_csv_are_deterministic():
    reports = [fake_report(2, 1e-2), fake_report(4, 1.25e-3)]
    rows = rate_table(reports)
    assert rows[0]["rate_u_T"] is None
    assert rows[1]["rate_u_T"] == pytest.approx(3.0)
    text = rates_csv(rows)
    assert text == rates_csv(rate_table(reports))
    header, first, second = text.strip().split("\n")
    assert header.startswith("level,nx,slabs")
    assert ",," in first


def test_certificates_energy_slack():
    cert = certificates(fake_report(2, 1e-2))
    assert cert["energy_nonincreasing"]
    cert = certificates(fake_report(2, 1e-2), energy_slack=0.0)
    assert not cert["energy_nonincreasing"]


@pytest.mark.parametrize("kwargs", [dict(case="nope"), dict(k=5), dict(alpha_factor=0.0), dict(dt=0.0),
                                    dict(nx=0), dict(tol=-1.0)])
def test_case_config_validation(kwargs):
    with pytest.raises(ValueError):
        CaseConfig(**kwargs)


def test_refined_config():
    cfg = CaseConfig(nx=4, slabs=5, dt=0.2).refined(2)
    assert (cfg.nx, cfg.slabs, cfg.dt) == (16, 20, 0.05)
    assert cfg.final_time == pytest.approx(1.0)


@pytest.fixture(scope="module")
def small_run():
    return run_case(CaseConfig(nx=2, slabs=2, dt=0.05, k=2, nu=1e-3))


def test_run_case_report(small_run):
    report, result = small_run
    assert report.err_u_T > 0 and report.err_u_E > 0 and report.err_p_T > 0
    assert report.div_max < 1e-10 * max(report.velocity_scale, 1.0)
    assert report.jump_l2 < 1e-10
    assert len(report.energies) == 3
    assert report.picard_iterations == [r.status.iterations for r in result.records]
    json.dumps(report.to_dict())


def test_vtk_export_matches_direct_evaluation(small_run, tmp_path):
    _, result = small_run
    rec = result.records[-1]
    ev = prepare(rec.slab, 2)
    path = tmp_path / "slab.vtk"
    write_slab_fields(rec, ev, path)
    pts, vel, pres = read_vtk_point_data(path)
    X, u, p = sample_cells(rec.slab, rec.state, 2)
    assert np.allclose(pts, X.reshape(-1, 3), rtol=1e-15)
    assert np.allclose(vel[:, :2], u.reshape(-1, 2), rtol=1e-15)
    assert np.allclose(pres, p.ravel(), rtol=1e-15)
    # nodes carry time in the third coordinate
    assert pts[:, 2].min() == pytest.approx(rec.slab.t0) and pts[:, 2].max() == pytest.approx(rec.slab.t1)


def test_cli_solve(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["solve", "--case", "uniform-flow", "--k", "1", "--nx", "2", "--slabs", "2", "--dt", "0.05",
                 "--out", str(out), "--vtk"])
    assert code == 0
    data = json.loads((out / "report.json").read_text())
    assert data["levels"][0]["err_u_E"] < 1e-9
    assert data["certificates"][0]["jump_l2"] < 1e-10
    assert (out / "rates.csv").read_text().startswith("level,")
    assert sorted(p.name for p in out.glob("slab_*.vtk")) == ["slab_0000.vtk", "slab_0001.vtk"]
    assert "level 0" in capsys.readouterr().out


def test_cli_external_mesh_and_errors(tmp_path, capsys):
    mesh = tmp_path / "m.txt"
    write_triangulation(triangulate_unit_square(2), mesh)
    out = tmp_path / "ext"
    assert main(["solve", "--case", "external-mesh", "--mesh", str(mesh), "--k", "1", "--slabs", "1",
                 "--out", str(out)]) == 0
    assert main(["solve", "--case", "external-mesh", "--mesh", str(tmp_path / "missing"),
                 "--out", str(out)]) == 1
    assert main(["solve", "--k", "9", "--out", str(out)]) == 1
    assert "error:" in capsys.readouterr().err
