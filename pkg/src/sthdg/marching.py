"""Initial projection, per-slab Picard iteration and slab-to-slab time marching."""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import make_basis
from .dofs import build_layout, interpolate_dirichlet
from .errors import InvalidInitialCondition, NoConvergence, ProjectionSingular, SlabError, SthdgError
from .forms import ConvectionField, prepare, quadrature_degree
from .linear_system import assemble, condense_and_solve, facet_pattern, facet_residual, stokes_blocks
from .mesh import CellKind, extrude_slab, move_mesh
from .quadrature import make_quadrature

log = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 50
# iterate changes below this fraction of the iterate itself are roundoff
ROUNDOFF_TOL = 1e-11
U0_DIVERGENCE_TOL = 1e-8


@dataclass
class TraceField:
    """Velocity on a spatial mesh at one time level, P_k per triangle.

    ``coeffs[T, c]`` are the coefficients of component c in the orthonormal
    basis of the reference triangle mapped through the vertices of triangle T
    (in ``mesh.triangles`` order).
    """

    mesh: object
    time: float
    k: int
    coeffs: np.ndarray  # (nt, 2, n_f)

    def evaluate_reference(self, triangles, chi):
        """Values at reference points whose basis values are ``chi`` (nq, n_f)."""
        return np.einsum("gcm,qm->gqc", self.coeffs[triangles], chi)

    def _rule(self, exactness=None):
        rule = make_quadrature(2, exactness or 2 * self.k + 2)
        return rule, make_basis(self.k, 2).evaluate(rule.points)

    def points(self, rule):
        P = self.mesh.vertices[self.mesh.triangles]
        s, r = rule.points[:, 0], rule.points[:, 1]
        return (P[:, None, 0] + s[None, :, None] * (P[:, None, 1] - P[:, None, 0])
                + r[None, :, None] * (P[:, None, 2] - P[:, None, 0]))

    def energy(self):
        """int |u|^2 over the spatial domain."""
        areas = self.mesh.areas()
        # orthonormal on the reference triangle: int_T |u|^2 = 2|T| sum c^2
        return float(np.sum(2.0 * areas[:, None, None] * self.coeffs ** 2))

    def l2_error(self, exact):
        """L2 distance to ``exact(x)`` over the spatial mesh."""
        rule, chi = self._rule(2 * self.k + 3)
        x = self.points(rule)
        uh = np.einsum("tcm,qm->tqc", self.coeffs, chi)
        ue = np.asarray(exact(x), dtype=float)
        w = 2.0 * self.mesh.areas()[:, None] * rule.weights[None, :]
        return float(np.sqrt(np.sum(w[..., None] * (uh - ue) ** 2)))

    def divergence_max(self):
        basis = make_basis(self.k, 2)
        rule = make_quadrature(2, 2 * self.k + 2)
        g = basis.gradient(rule.points)  # (nq, m, 2)
        P = self.mesh.vertices[self.mesh.triangles]
        J = np.transpose(P[:, 1:] - P[:, :1], (0, 2, 1))
        Jinv = np.linalg.inv(J)
        gp = np.einsum("qma,tab->tqmb", g, Jinv)
        div = np.einsum("tm,tqm->tq", self.coeffs[:, 0], gp[..., 0]) + \
            np.einsum("tm,tqm->tq", self.coeffs[:, 1], gp[..., 1])
        return float(np.abs(div).max())

    def normal_jump_max(self):
        """Max |[[u.n]]| over interior edges at Gauss points."""
        data = _edge_data(self.mesh, self.k)
        if data is None:
            return 0.0
        vals = _edge_normal_traces(self, data)
        return float(np.abs(vals).max()) if vals.size else 0.0


def _edge_data(mesh, k):
    """Interior edges with the reference coordinates of Gauss points in both triangles."""
    tri = mesh.triangles
    loc = np.array([[0, 1], [1, 2], [2, 0]])
    e = np.sort(tri[:, loc], axis=2).reshape(-1, 2)
    owner = np.repeat(np.arange(len(tri)), 3)
    key, inv, cnt = np.unique(e, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    interior = np.flatnonzero(cnt == 2)
    if interior.size == 0:
        return None
    order = np.argsort(inv, kind="stable")
    sorted_inv = inv[order]
    starts = np.searchsorted(sorted_inv, interior)
    left = owner[order[starts]]
    right = owner[order[starts + 1]]
    edges = key[interior]
    xg, wg = np.polynomial.legendre.leggauss(k + 2)
    s = 0.5 * (xg + 1.0)
    wg = 0.5 * wg
    A = mesh.vertices[edges[:, 0]]
    B = mesh.vertices[edges[:, 1]]
    pts = A[:, None, :] + s[None, :, None] * (B - A)[:, None, :]
    length = np.linalg.norm(B - A, axis=1)
    tang = (B - A) / length[:, None]
    normal = np.column_stack([tang[:, 1], -tang[:, 0]])
    # orient normal outward from the left triangle
    cl = mesh.vertices[tri[left]].mean(axis=1)
    flip = np.einsum("ec,ec->e", cl - A, normal) > 0
    normal[flip] *= -1.0
    P = mesh.vertices[tri]
    J = np.transpose(P[:, 1:] - P[:, :1], (0, 2, 1))
    Jinv = np.linalg.inv(J)

    def ref(t):
        return np.einsum("eij,eqj->eqi", Jinv[t], pts - P[t, None, 0])

    return dict(left=left, right=right, normal=normal, length=length, weights=wg,
                xi_left=ref(left), xi_right=ref(right), s=s)


def _edge_normal_traces(trace, data):
    basis = make_basis(trace.k, 2)
    ul = np.einsum("ecm,eqm->eqc", trace.coeffs[data["left"]], basis.evaluate(data["xi_left"]))
    ur = np.einsum("ecm,eqm->eqc", trace.coeffs[data["right"]], basis.evaluate(data["xi_right"]))
    return np.einsum("eqc,ec->eq", ul - ur, data["normal"])


def _check_divergence_free(u0, x, scale):
    h = 1e-3
    # fourth-order central differences
    def d(comp, axis):
        e = np.zeros(2)
        e[axis] = h
        f = lambda s: np.asarray(u0(x + s * e), dtype=float)[..., comp]
        return (-f(2) + 8 * f(1) - 8 * f(-1) + f(-2)) / (12 * h)

    div = d(0, 0) + d(1, 1)
    worst = float(np.abs(div).max()) if div.size else 0.0
    if worst > U0_DIVERGENCE_TOL * max(scale, 1.0):
        raise InvalidInitialCondition(f"initial velocity is not divergence-free (max |div| = {worst:.3e})")


def project_initial(u0, mesh, k, time=0.0, check=True):
    """Divergence-free, normal-continuous projection of ``u0`` onto broken [P_k]^2.

    Minimises the L2 distance to u0 subject to zero divergence tested against
    P_{k-1} on every triangle and zero normal jump tested against P_k on every
    interior edge, using Lagrange multipliers.
    """
    basis = make_basis(k, 2)
    m = basis.size
    rule = make_quadrature(2, 2 * k + 3)
    chi = basis.evaluate(rule.points)
    P = mesh.vertices[mesh.triangles]
    nt = len(P)
    s, r = rule.points[:, 0], rule.points[:, 1]
    x = (P[:, None, 0] + s[None, :, None] * (P[:, None, 1] - P[:, None, 0])
         + r[None, :, None] * (P[:, None, 2] - P[:, None, 0]))
    uq = np.asarray(u0(x), dtype=float)
    if check:
        _check_divergence_free(u0, x, float(np.abs(uq).max()) if uq.size else 0.0)
    cstar = np.einsum("q,tqc,qm->tcm", rule.weights, uq, chi)  # broken L2 projection
    areas = mesh.areas()
    n = nt * 2 * m

    rows, cols, vals = [], [], []
    nrow = 0
    if k >= 1:
        bq = make_basis(k - 1, 2)
        rq = make_quadrature(2, 2 * k)
        qv = bq.evaluate(rq.points)  # (nq, mq)
        J = np.transpose(P[:, 1:] - P[:, :1], (0, 2, 1))
        Jinv = np.linalg.inv(J)
        gp = np.einsum("qma,tab->tqmb", basis.gradient(rq.points), Jinv)  # (nt, nq, m, 2)
        w = 2.0 * areas[:, None] * rq.weights[None, :]
        for c in range(2):
            blk = np.einsum("tq,ql,tqm->tlm", w, qv, gp[..., c])  # (nt, mq, m)
            mq = qv.shape[1]
            rr = np.arange(nt)[:, None, None] * mq + np.arange(mq)[None, :, None]
            cc = (np.arange(nt)[:, None, None] * 2 + c) * m + np.arange(m)[None, None, :]
            rows.append(np.broadcast_to(rr, blk.shape).ravel())
            cols.append(np.broadcast_to(cc, blk.shape).ravel())
            vals.append(blk.ravel())
        nrow = nt * qv.shape[1]
    data = _edge_data(mesh, k)
    if data is not None:
        ne = len(data["left"])
        mu = np.polynomial.legendre.legvander(2 * data["s"] - 1.0, k) * np.sqrt(2 * np.arange(k + 1) + 1)
        we = data["length"][:, None] * data["weights"][None, :]
        for side, sign in (("left", 1.0), ("right", -1.0)):
            ph = basis.evaluate(data["xi_" + side])  # (ne, nq, m)
            t = data[side]
            for c in range(2):
                blk = sign * np.einsum("eq,ql,eqm,e->elm", we, mu, ph, data["normal"][:, c])
                rr = nrow + np.arange(ne)[:, None, None] * (k + 1) + np.arange(k + 1)[None, :, None]
                cc = (t[:, None, None] * 2 + c) * m + np.arange(m)[None, None, :]
                rows.append(np.broadcast_to(rr, blk.shape).ravel())
                cols.append(np.broadcast_to(cc, blk.shape).ravel())
                vals.append(blk.ravel())
        nrow += ne * (k + 1)
    B = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nrow, n)).tocsr()
    minv = np.repeat(1.0 / (2.0 * areas), 2 * m)  # inverse of the (diagonal) mass matrix
    K = (B @ sp.diags(minv) @ B.T).tocsc()
    c0 = cstar.ravel()
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise ProjectionSingular(f"constraint system is rank deficient: {exc}") from exc
    d = np.abs(lu.U.diagonal())
    if d.min() <= 1e-13 * d.max():
        raise ProjectionSingular("constraint system is rank deficient")
    lam = lu.solve(B @ c0)
    c = c0 - minv * (B.T @ lam)
    return TraceField(mesh, time, k, c.reshape(nt, 2, m))


def extract_trace(ev, state):
    """Top-level restriction u_h(t^{n+1}) of a slab solution."""
    slab = ev.slab
    grp = next(g for g in ev.groups if g.kind == CellKind.TOP)
    u = np.einsum("gcn,gqn->gqc", state.U[grp.cells], grp.tphi)
    coeffs = np.zeros((slab.top.n_triangles, 2, grp.n_f))
    coeffs[grp.prism] = np.einsum("q,gqc,qm->gcm", ev.rule2.weights, u, grp.chi)
    return TraceField(slab.top, slab.t1, ev.k, coeffs)


@dataclass
class PicardStatus:
    iterations: int = 0
    delta_u: float = float("inf")
    delta_p: float = float("inf")
    converged: bool = False
    criterion: str = ""
    factorizations: int = 0
    krylov_iterations: int = 0
    timings: dict = field(default_factory=dict)

    def add_timings(self, timings):
        for key, val in timings.items():
            self.timings[key] = self.timings.get(key, 0.0) + val
    history: list = field(default_factory=list)


def _roundoff_level(new, old):
    """Change of the joint cell vector [U, P] at roundoff level relative to its size."""
    scale = max(np.abs(new.U).max(initial=0.0), np.abs(new.P).max(initial=0.0))
    change = max(np.abs(new.U - old.U).max(initial=0.0), np.abs(new.P - old.P).max(initial=0.0))
    return change <= ROUNDOFF_TOL * scale


def _relative_delta(new, old, seed):
    num = np.abs(new - old).max(initial=0.0)
    den = np.abs(new - seed).max(initial=0.0)
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return float(num / den)


@dataclass
class SlabProblem:
    """Everything needed to solve one slab besides the advecting field."""

    ev: object
    layout: object
    nu: float
    alpha: float
    f: Optional[Callable] = None
    g: Optional[Callable] = None
    trace: Optional[TraceField] = None
    dirichlet_values: Optional[np.ndarray] = None
    ale: bool = False
    pin_pressure: bool = True
    _base: Optional[list] = field(default=None, repr=False)
    _pins: Optional[np.ndarray] = field(default=None, repr=False)
    _pattern: Optional[object] = field(default=None, repr=False)

    def system(self, conv):
        if self._base is None:
            self._base = stokes_blocks(self.ev, self.nu, self.alpha, f=self.f, g=self.g, trace=self.trace)
        system = assemble(self.ev, self.layout, self.nu, self.alpha, conv=conv,
                          dirichlet_values=self.dirichlet_values, ale=self.ale,
                          pin_pressure=self.pin_pressure, base=self._base, pins=self._pins)
        if self.pin_pressure:
            self._pins = system.pins
        # same facet coupling for every Picard iterate of the slab
        if self._pattern is None:
            self._pattern = system.pattern or facet_pattern(system.blocks, self.layout.n_Wbar)
        system.pattern = self._pattern
        return system


def picard_slab(problem, tol, max_iters=DEFAULT_MAX_ITERS, stokes_seed=False):
    """Picard iteration on one slab.

    Iterate 0 solves the problem with a zero advecting field (``stokes_seed``
    drops the convective form altogether). Each further iterate advects with
    the previous one until the relative l-infinity changes of the cell velocity
    and pressure coefficients both drop below ``tol``, or until the change of
    the joint cell vector is at roundoff level relative to the iterate itself
    (``criterion`` on the status tells which).

    Returns ``(state, status, system)`` where ``system`` is the last solved
    linear system.
    """
    if tol <= 0 or max_iters < 1:
        raise ValueError("tol must be > 0 and max_iters >= 1")
    layout = problem.layout
    seed_conv = None if stokes_seed else ConvectionField.zero(layout)
    system = problem.system(seed_conv)
    seed = condense_and_solve(system)
    solver = system.solver
    prev = seed
    status = PicardStatus(factorizations=1)
    status.add_timings(system.timings)
    for it in range(1, max_iters + 1):
        conv = ConvectionField.from_state(prev, layout)
        system = problem.system(conv)
        state = condense_and_solve(system, solver=solver, x0=prev.Wbar)
        solver = system.solver
        status.factorizations += int(system.refactored)
        status.krylov_iterations += system.krylov_iterations
        status.add_timings(system.timings)
        du = _relative_delta(state.U, prev.U, seed.U)
        dp = _relative_delta(state.P, prev.P, seed.P)
        status.iterations = it
        status.delta_u, status.delta_p = du, dp
        status.history.append((du, dp))
        stalled = _roundoff_level(state, prev)
        prev = state
        if max(du, dp) < tol or stalled:
            status.converged = True
            status.criterion = "tol" if max(du, dp) < tol else "roundoff"
            return state, status, system
    raise NoConvergence(max_iters, status)


@dataclass
class SlabRecord:
    index: int
    slab: object
    state: object
    status: PicardStatus
    trace_in: TraceField
    trace_out: TraceField
    facet_residual: float
    timings: dict
    diagnostics: dict = field(default_factory=dict)


@dataclass
class MarchResult:
    records: list
    initial_trace: TraceField
    timings: dict

    @property
    def final_trace(self):
        return self.records[-1].trace_out


def march(problem, k, nu, n_slabs, dt, alpha_factor=6.0, tol=1e-12, max_iters=DEFAULT_MAX_ITERS,
          ale=False, t_start=0.0, on_slab=None):
    """Solve ``n_slabs`` consecutive slabs of length ``dt``.

    ``problem`` provides ``reference_mesh``, ``motion``, ``f``, ``data``
    (BoundaryData). ``on_slab(record, ev, layout)`` is called after every slab
    while its evaluation data is still alive and may fill
    ``record.diagnostics``.
    """
    alpha = alpha_factor * k * k
    timings = {"mesh": 0.0, "assembly": 0.0, "condensation": 0.0, "factorization": 0.0,
               "solve": 0.0, "back_substitution": 0.0}
    t = time.perf_counter()
    times = t_start + dt * np.arange(n_slabs + 1)
    times[-1] = t_start + dt * n_slabs
    mesh0 = move_mesh(problem.reference_mesh, problem.motion, times[0])
    timings["mesh"] += time.perf_counter() - t
    data = problem.data
    if data.initial is not None:
        trace = project_initial(data.initial, mesh0, k, time=times[0])
    else:
        trace = TraceField(mesh0, times[0], k, np.zeros((mesh0.n_triangles, 2, (k + 1) * (k + 2) // 2)))
    initial = trace
    records = []
    bottom = mesh0
    for n in range(n_slabs):
        try:
            t = time.perf_counter()
            top = move_mesh(problem.reference_mesh, problem.motion, times[n + 1])
            slab = extrude_slab(bottom, top, times[n], times[n + 1])
            ev = prepare(slab, k)
            layout = build_layout(slab, k)
            dvals = interpolate_dirichlet(layout, data, slab)
            timings["mesh"] += time.perf_counter() - t
            sp_ = SlabProblem(ev, layout, nu, alpha, f=problem.f, g=data.neumann, trace=trace,
                              dirichlet_values=dvals, ale=ale)
            state, status, system = picard_slab(sp_, tol, max_iters)
        except SthdgError as exc:
            raise SlabError(n, exc) from exc
        for key, val in status.timings.items():
            timings[key] = timings.get(key, 0.0) + val
        out = extract_trace(ev, state)
        rec = SlabRecord(n, slab, state, status, trace, out, facet_residual(system, state),
                         dict(status.timings))
        if on_slab is not None:
            on_slab(rec, ev, layout)
        log.info("slab %d t=[%.4f, %.4f] picard=%d (%s) lu=%d gmres=%d du=%.2e dp=%.2e", n, slab.t0,
                 slab.t1, status.iterations, status.criterion, status.factorizations,
                 status.krylov_iterations, status.delta_u, status.delta_p)
        records.append(rec)
        trace = out
        bottom = top
    return MarchResult(records, initial, timings)
