"""Error norms, certificates, convergence tables and field export."""

import csv
import io
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .basis import MAX_DEGREE, make_basis
from .marching import march
from .mesh import CellKind, read_triangulation
from .problems import make_problem
from .quadrature import make_quadrature

log = logging.getLogger(__name__)

CASES = ("manufactured", "uniform-flow", "energy-decay", "external-mesh")
RATE_COLUMNS = ("level", "nx", "slabs", "cells_per_slab", "dt",
                "err_u_T", "rate_u_T", "err_p_T", "rate_p_T",
                "err_u_E", "rate_u_E", "err_p_E", "rate_p_E", "div_max", "div_l2")


@dataclass
class CaseConfig:
    case: str = "manufactured"
    nx: int = 8
    slabs: int = 20
    dt: float = 0.05
    k: int = 2
    nu: float = 1e-4
    alpha_factor: float = 6.0
    tol: float = 1e-12
    max_iters: int = 50
    ale: bool = False
    mesh: Optional[str] = None
    out: Optional[str] = None
    vtk: bool = False

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"case must be one of {CASES}")
        if not self.alpha_factor > 0:
            raise ValueError("alpha factor must be positive")
        if not 1 <= self.k <= MAX_DEGREE:
            raise ValueError(f"k must be in 1..{MAX_DEGREE}")
        if self.nx < 1 or self.slabs < 1 or not self.dt > 0:
            raise ValueError("nx, slabs and dt must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    @property
    def final_time(self):
        return self.slabs * self.dt

    def refined(self, level):
        f = 2 ** level
        return CaseConfig(**{**asdict(self), "nx": self.nx * f, "slabs": self.slabs * f, "dt": self.dt / f})


@dataclass
class DiagnosticsReport:
    case: str
    k: int
    nx: int
    slabs: int
    dt: float
    nu: float
    alpha: float
    ale: bool
    cells_per_slab: int
    final_time: float
    err_u_T: Optional[float] = None
    err_p_T: Optional[float] = None
    err_u_E: Optional[float] = None
    err_p_E: Optional[float] = None
    div_max: float = 0.0
    div_l2: float = 0.0
    velocity_scale: float = 0.0
    jump_l2: float = 0.0
    facet_residual_max: float = 0.0
    energies: list = field(default_factory=list)
    picard_iterations: list = field(default_factory=list)
    picard_criteria: list = field(default_factory=list)
    factorizations: int = 0
    timings: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- slab measures

def _error_rule(k):
    return make_quadrature(3, 2 * k + 3), make_quadrature(2, 2 * k + 3)


def _cell_points(grp, rule):
    J = np.linalg.inv(grp.jinv)
    x = grp.origin[:, None, :] + np.einsum("gij,qj->gqi", J, rule.points)
    w = rule.weights[None, :] * np.abs(np.linalg.det(J))[:, None]
    return x, w


def space_time_errors(ev, state, exact):
    """Squared L2 errors of velocity and pressure over the cells of one slab."""
    r3, _ = _error_rule(ev.k)
    phi = ev.basis_u.evaluate(r3.points)
    psi = ev.basis_p.evaluate(r3.points)
    eu = ep = 0.0
    for grp in ev.groups:
        x, w = _cell_points(grp, r3)
        uh = np.einsum("gcn,qn->gqc", state.U[grp.cells], phi)
        ph = np.einsum("gn,qn->gq", state.P[grp.cells], psi)
        eu += float(np.sum(w[..., None] * (uh - exact.u(x)) ** 2))
        ep += float(np.sum(w * (ph - exact.p(x)) ** 2))
    return eu, ep


def top_errors(ev, state, exact):
    """L2 errors of velocity and pressure on the top time level of a slab."""
    _, r2 = _error_rule(ev.k)
    slab = ev.slab
    grp = next(g for g in ev.groups if g.kind == CellKind.TOP)
    TP = slab.top.vertices[slab.top.triangles[grp.prism]]
    s, r = r2.points[:, 0], r2.points[:, 1]
    x2 = (TP[:, None, 0] + s[None, :, None] * (TP[:, None, 1] - TP[:, None, 0])
          + r[None, :, None] * (TP[:, None, 2] - TP[:, None, 0]))
    x = np.concatenate([np.full(x2.shape[:2] + (1,), slab.t1), x2], axis=-1)
    xi = grp.to_reference(x)
    uh = np.einsum("gcn,gqn->gqc", state.U[grp.cells], ev.basis_u.evaluate(xi))
    ph = np.einsum("gn,gqn->gq", state.P[grp.cells], ev.basis_p.evaluate(xi))
    area = slab.top.areas()[grp.prism]
    w = 2.0 * area[:, None] * r2.weights[None, :]
    eu = float(np.sum(w[..., None] * (uh - exact.u(x)) ** 2))
    ep = float(np.sum(w * (ph - exact.p(x)) ** 2))
    return math.sqrt(eu), math.sqrt(ep)


def divergence_measures(ev, state):
    """(max |div u_h|, squared L2 norm of div u_h, max |u_h|) over cell quadrature points."""
    dmax = dl2 = umax = 0.0
    for grp in ev.groups:
        div = np.einsum("gcn,gqnc->gq", state.U[grp.cells], grp.grad[..., 1:])
        u = np.einsum("gcn,qn->gqc", state.U[grp.cells], grp.phi)
        dmax = max(dmax, float(np.abs(div).max()))
        dl2 += float(np.sum(grp.wq * div ** 2))
        umax = max(umax, float(np.abs(u).max()))
    return dmax, dl2, umax


def normal_jump(ev, layout, state):
    """Squared L2 norm over Q-facets of [[u_h.n]] (interior) and (u_h - ubar_h).n (boundary)."""
    nq = len(layout.q_facets)
    jump = np.zeros((nq, ev.rule2.weights.size))
    for grp in ev.groups:
        for j in range(grp.n_q):
            qi = layout.q_index[grp.qfacet[:, j]]
            u = np.einsum("gcn,gqn->gqc", state.U[grp.cells], grp.fphi[:, j])
            ub = np.einsum("gcm,qm->gqc", state.Ubar[qi], grp.chi)
            val = np.einsum("gqc,gc->gq", u - ub, grp.normal[:, j, 1:])
            np.add.at(jump, qi, val)
    area = ev.slab.facet_area[layout.q_facets]
    return float(np.sum(2.0 * area[:, None] * ev.rule2.weights[None, :] * jump ** 2))


# ---------------------------------------------------------------- runs

def load_problem(config):
    mesh = read_triangulation(config.mesh) if config.mesh else None
    return make_problem(config.case, nx=config.nx, nu=config.nu, mesh=mesh)


def run_case(config, export_dir=None):
    """March one configuration and collect its DiagnosticsReport.

    Returns ``(report, result)``; with ``export_dir`` the slab fields are also
    written as VTK files there.
    """
    problem = load_problem(config)
    exact = problem.exact
    totals = {"eu": 0.0, "ep": 0.0, "dl2": 0.0, "jump": 0.0, "dmax": 0.0, "umax": 0.0}
    last = {}

    def observe(rec, ev, layout):
        dmax, dl2, umax = divergence_measures(ev, rec.state)
        jump = normal_jump(ev, layout, rec.state)
        totals["dmax"] = max(totals["dmax"], dmax)
        totals["umax"] = max(totals["umax"], umax)
        totals["dl2"] += dl2
        totals["jump"] += jump
        rec.diagnostics.update(div_max=dmax, div_l2=math.sqrt(dl2), jump_l2=math.sqrt(jump))
        if exact is not None:
            eu, ep = space_time_errors(ev, rec.state, exact)
            totals["eu"] += eu
            totals["ep"] += ep
            last["T"] = top_errors(ev, rec.state, exact)
        if export_dir is not None:
            write_slab_fields(rec, ev, os.path.join(export_dir, f"slab_{rec.index:04d}.vtk"))

    t0 = time.perf_counter()
    result = march(problem, config.k, config.nu, config.slabs, config.dt, alpha_factor=config.alpha_factor,
                   tol=config.tol, max_iters=config.max_iters, ale=config.ale, on_slab=observe)
    wall = time.perf_counter() - t0
    first = result.records[0].slab
    report = DiagnosticsReport(
        case=config.case, k=config.k, nx=config.nx, slabs=config.slabs, dt=config.dt, nu=config.nu,
        alpha=config.alpha_factor * config.k ** 2, ale=config.ale, cells_per_slab=int(first.n_cells),
        final_time=float(result.records[-1].slab.t1),
        div_max=totals["dmax"], div_l2=math.sqrt(totals["dl2"]), velocity_scale=totals["umax"],
        jump_l2=math.sqrt(totals["jump"]),
        facet_residual_max=max(r.facet_residual for r in result.records),
        energies=[result.initial_trace.energy()] + [r.trace_out.energy() for r in result.records],
        picard_iterations=[r.status.iterations for r in result.records],
        picard_criteria=[r.status.criterion for r in result.records],
        factorizations=sum(r.status.factorizations for r in result.records),
        timings={**result.timings, "total": wall},
    )
    if exact is not None:
        report.err_u_T, report.err_p_T = last["T"]
        report.err_u_E, report.err_p_E = math.sqrt(totals["eu"]), math.sqrt(totals["ep"])
    return report, result


def _rate(a, b):
    if a is None or b is None or a <= 0 or b <= 0:
        return None
    return math.log2(a / b)


def rate_table(reports):
    """Rows with errors and observed orders between consecutive levels."""
    rows = []
    for lvl, rep in enumerate(reports):
        row = {"level": lvl, "nx": rep.nx, "slabs": rep.slabs, "cells_per_slab": rep.cells_per_slab,
               "dt": rep.dt, "div_max": rep.div_max, "div_l2": rep.div_l2}
        prev = reports[lvl - 1] if lvl > 0 else None
        for key in ("u_T", "p_T", "u_E", "p_E"):
            err = getattr(rep, "err_" + key)
            row["err_" + key] = err
            row["rate_" + key] = _rate(getattr(prev, "err_" + key), err) if prev is not None else None
        rows.append(row)
    return rows


def rates_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RATE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row[k] is None else (f"{row[k]:.6e}" if isinstance(row[k], float) else row[k]))
                         for k in RATE_COLUMNS})
    return buf.getvalue()


def convergence_study(config, levels):
    """Run levels 0..levels-1 (mesh and time step refined together) and tabulate rates."""
    if levels < 2:
        raise ValueError("a convergence study needs at least 2 levels")
    reports = []
    for lvl in range(levels):
        cfg = config.refined(lvl)
        log.info("level %d: nx=%d slabs=%d dt=%g", lvl, cfg.nx, cfg.slabs, cfg.dt)
        reports.append(run_case(cfg)[0])
    return rate_table(reports), reports


def certificates(report, energy_slack=1e-12):
    """Conservation and stability summary of one run."""
    e = np.asarray(report.energies)
    increase = np.diff(e) if e.size > 1 else np.zeros(0)
    return {
        "div_max": report.div_max,
        "div_max_relative": report.div_max / report.velocity_scale if report.velocity_scale > 0 else 0.0,
        "div_l2": report.div_l2,
        "jump_l2": report.jump_l2,
        "facet_residual_max": report.facet_residual_max,
        "energies": list(map(float, e)),
        "energy_nonincreasing": bool(np.all(increase <= energy_slack * max(e[0], 0.0))) if e.size else True,
        "max_energy_increase": float(increase.max()) if increase.size else 0.0,
    }


def nu_robustness(report_a, report_b):
    """Relative difference of the velocity errors of two runs at different viscosities."""
    a, b = report_a.err_u_T, report_b.err_u_T
    return {"nu": [report_a.nu, report_b.nu], "err_u_T": [a, b],
            "relative_difference": abs(a - b) / max(abs(a), abs(b))}


# ---------------------------------------------------------------- export

# reference coordinates of the 10 nodes of a quadratic tetrahedron in VTK order
_TET10 = np.array([
    [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
    [0.5, 0, 0], [0.5, 0.5, 0], [0, 0.5, 0], [0, 0, 0.5], [0.5, 0, 0.5], [0, 0.5, 0.5],
], dtype=float)
VTK_QUADRATIC_TETRA = 24


def sample_cells(slab, state, k):
    """Points (x1, x2, t), velocities and pressures at the 10 nodes of every cell."""
    P = slab.vertices[slab.cells]
    J = np.transpose(P[:, 1:] - P[:, :1], (0, 2, 1))
    X = P[:, None, 0] + np.einsum("cij,qj->cqi", J, _TET10)
    u = np.einsum("cdn,qn->cqd", state.U, make_basis(k, 3).evaluate(_TET10))
    p = np.einsum("cn,qn->cq", state.P, make_basis(k - 1, 3).evaluate(_TET10))
    return X[..., [1, 2, 0]], u, p


def write_slab_fields(record, ev, path):
    """Legacy ASCII VTK file with per-cell (discontinuous) quadratic sampling."""
    X, u, p = sample_cells(record.slab, record.state, ev.k)
    nc = len(X)
    try:
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write(f"slab {record.index} t=[{record.slab.t0:.12g}, {record.slab.t1:.12g}]\n")
            fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {nc * 10} double\n")
            np.savetxt(fh, X.reshape(-1, 3), fmt="%.17g")
            fh.write(f"CELLS {nc} {nc * 11}\n")
            conn = np.column_stack([np.full(nc, 10), np.arange(nc * 10).reshape(nc, 10)])
            np.savetxt(fh, conn, fmt="%d")
            fh.write(f"CELL_TYPES {nc}\n")
            np.savetxt(fh, np.full(nc, VTK_QUADRATIC_TETRA), fmt="%d")
            fh.write(f"POINT_DATA {nc * 10}\n")
            fh.write("VECTORS velocity double\n")
            vel = np.concatenate([u.reshape(-1, 2), np.zeros((nc * 10, 1))], axis=1)
            np.savetxt(fh, vel, fmt="%.17g")
            fh.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, p.reshape(-1, 1), fmt="%.17g")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_vtk_point_data(path):
    """Points, velocities and pressures of a file written by :func:`write_slab_fields`."""
    with open(path) as fh:
        lines = fh.read().split("\n")
    i = next(j for j, ln in enumerate(lines) if ln.startswith("POINTS"))
    n = int(lines[i].split()[1])
    pts = np.loadtxt(lines[i + 1:i + 1 + n]).reshape(n, 3)
    i = next(j for j, ln in enumerate(lines) if ln.startswith("VECTORS"))
    vel = np.loadtxt(lines[i + 1:i + 1 + n]).reshape(n, 3)
    i = next(j for j, ln in enumerate(lines) if ln.startswith("LOOKUP_TABLE"))
    pres = np.loadtxt(lines[i + 1:i + 1 + n]).reshape(n)
    return pts, vel, pres


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(data, path):
    try:
        with open(path, "w") as fh:
            json.dump(_jsonable(data), fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def export_fields(config, out_dir):
    """Run a case, writing one VTK file per slab and ``report.json`` to ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    report, result = run_case(config, export_dir=out_dir)
    write_json({"config": asdict(config), "report": report.to_dict(), "certificates": certificates(report)},
               os.path.join(out_dir, "report.json"))
    return report, result
