"""Cell-local weak-form blocks of the space-time HDG scheme.

Cells of a slab are processed in three batches (tetrahedra owning the bottom
facet, interior "middle" tetrahedra, tetrahedra owning the top facet) so that
every batch has the same number of Q-facets per cell. All local matrices use
rows for test functions and columns for trial functions with local ordering

    [u1 (n_u), u2 (n_u), p (n_p) | per Q-facet slot: ubar1, ubar2, pbar (n_f each)]
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .basis import make_basis
from .kernels import weighted_gram
from .mesh import CellKind, FacetKind
from .quadrature import make_quadrature


def quadrature_degree(k):
    """Exactness used for all cell and facet integrals (trilinear convective terms)."""
    return max(3 * k + 1, 2 * k + 2)


@dataclass
class CellGroup:
    kind: CellKind
    cells: np.ndarray  # (G,)
    prism: np.ndarray  # (G,) spatial triangle of each cell
    n_q: int
    diam: np.ndarray  # (G,)
    volume: np.ndarray
    origin: np.ndarray  # (G, 3)
    jinv: np.ndarray  # (G, 3, 3), J^{-1}
    # cell quadrature
    xq: np.ndarray  # (G, nq, 3)
    wq: np.ndarray  # (G, nq)
    phi: np.ndarray  # (nq, n_u)
    grad: np.ndarray  # (G, nq, n_u, 3) physical (d/dt, d/dx1, d/dx2)
    psi: np.ndarray  # (nq, n_p)
    # Q-facet slots
    qfacet: np.ndarray  # (G, nQ)
    qkind: np.ndarray  # (G, nQ)
    normal: np.ndarray  # (G, nQ, 3)
    vg: np.ndarray  # (G, nQ, 2)
    fx: np.ndarray  # (G, nQ, nqf, 3)
    fw: np.ndarray  # (G, nQ, nqf)
    fphi: np.ndarray  # (G, nQ, nqf, n_u)
    fgrad: np.ndarray  # (G, nQ, nqf, n_u, 3)
    fpsi: np.ndarray  # (G, nQ, nqf, n_p)
    chi: np.ndarray  # (nqf, n_f)
    # temporal facet (bottom or top), parametrised by the spatial triangle
    tx: Optional[np.ndarray] = None  # (G, nqf, 3)
    tw: Optional[np.ndarray] = None  # (G, nqf)
    tphi: Optional[np.ndarray] = None  # (G, nqf, n_u)
    tpsi: Optional[np.ndarray] = None

    @property
    def size(self):
        return len(self.cells)

    @property
    def n_u(self):
        return self.phi.shape[1]

    @property
    def n_p(self):
        return self.psi.shape[1]

    @property
    def n_f(self):
        return self.chi.shape[1]

    @property
    def n_cell_local(self):
        return 2 * self.n_u + self.n_p

    @property
    def n_local(self):
        return self.n_cell_local + 3 * self.n_f * self.n_q

    def u(self, comp):
        return slice(comp * self.n_u, (comp + 1) * self.n_u)

    @property
    def p(self):
        return slice(2 * self.n_u, 2 * self.n_u + self.n_p)

    def ubar(self, slot, comp):
        base = self.n_cell_local + 3 * self.n_f * slot + comp * self.n_f
        return slice(base, base + self.n_f)

    def pbar(self, slot):
        base = self.n_cell_local + 3 * self.n_f * slot + 2 * self.n_f
        return slice(base, base + self.n_f)

    def to_reference(self, x):
        """Cell reference coordinates of physical points x[g, ..., 3]."""
        shape = x.shape
        xx = x.reshape(shape[0], -1, 3) - self.origin[:, None, :]
        return np.einsum("gij,gqj->gqi", self.jinv, xx).reshape(shape)


@dataclass
class SlabEval:
    """Basis and geometry data of a slab, evaluated once and reused by all forms."""

    k: int
    slab: object
    groups: list
    rule3: object
    rule2: object
    basis_u: object
    basis_p: object
    basis_f: object


def _map_data(P):
    origin = P[:, 0]
    J = np.transpose(P[:, 1:] - P[:, :1], (0, 2, 1))
    return origin, J, np.linalg.inv(J)


def prepare(slab, k, exactness=None):
    """Precompute quadrature, basis values and geometry for every cell batch."""
    deg = exactness or quadrature_degree(k)
    r3 = make_quadrature(3, deg)
    r2 = make_quadrature(2, deg)
    bu = make_basis(k, 3)
    bp = make_basis(k - 1, 3)
    bf = make_basis(k, 2)
    phi = bu.evaluate(r3.points)
    dphi = bu.gradient(r3.points)
    psi = bp.evaluate(r3.points)
    chi = bf.evaluate(r2.points)
    s, r = r2.points[:, 0], r2.points[:, 1]
    nv = slab.n_spatial_vertices
    tri = slab.bottom.triangles

    groups = []
    for kind in (CellKind.BOTTOM, CellKind.MIDDLE, CellKind.TOP):
        cells = np.flatnonzero(slab.cell_kind == kind)
        if cells.size == 0:
            continue
        P = slab.vertices[slab.cells[cells]]
        origin, J, Jinv = _map_data(P)
        det = np.abs(np.linalg.det(J))
        xq = origin[:, None, :] + np.einsum("gij,qj->gqi", J, r3.points)
        wq = r3.weights[None, :] * det[:, None]
        grad = np.einsum("qna,gab->gqnb", dphi, Jinv)

        cf = slab.cell_facets[cells]
        fk = slab.facet_kind[cf]
        is_q = fk >= FacetKind.INTERIOR
        n_q = int(is_q[0].sum())
        assert np.all(is_q.sum(axis=1) == n_q)
        slots = np.argsort(~is_q, axis=1, kind="stable")[:, :n_q]  # local face ids of Q-facets
        qfacet = np.take_along_axis(cf, slots, axis=1)
        qkind = slab.facet_kind[qfacet]
        normal = np.take_along_axis(slab.cell_normals[cells], slots[..., None], axis=1)
        vg = slab.facet_grid_velocity[qfacet]
        FP = slab.vertices[slab.facets[qfacet]]  # (G, nQ, 3, 3)
        fx = (FP[:, :, None, 0] + s[None, None, :, None] * (FP[:, :, None, 1] - FP[:, :, None, 0])
              + r[None, None, :, None] * (FP[:, :, None, 2] - FP[:, :, None, 0]))
        area = slab.facet_area[qfacet]
        fw = 2.0 * area[..., None] * r2.weights
        xi = np.einsum("gij,gfqj->gfqi", Jinv, fx - origin[:, None, None, :])
        fphi = bu.evaluate(xi)
        fgrad = np.einsum("gfqna,gab->gfqnb", bu.gradient(xi), Jinv)
        fpsi = bp.evaluate(xi)

        grp = CellGroup(
            kind=kind, cells=cells, prism=slab.cell_prism[cells], n_q=n_q, diam=slab.cell_diameter[cells],
            volume=slab.cell_volume[cells], origin=origin, jinv=Jinv,
            xq=xq, wq=wq, phi=phi, grad=grad, psi=psi,
            qfacet=qfacet, qkind=qkind, normal=normal, vg=vg,
            fx=fx, fw=fw, fphi=fphi, fgrad=fgrad, fpsi=fpsi, chi=chi,
        )
        if kind != CellKind.MIDDLE:
            level = slab.t0 if kind == CellKind.BOTTOM else slab.t1
            mesh = slab.bottom if kind == CellKind.BOTTOM else slab.top
            TP = mesh.vertices[tri[slab.cell_prism[cells]]]  # (G, 3, 2)
            tx2 = (TP[:, None, 0] + s[None, :, None] * (TP[:, None, 1] - TP[:, None, 0])
                   + r[None, :, None] * (TP[:, None, 2] - TP[:, None, 0]))
            tx = np.concatenate([np.full(tx2.shape[:2] + (1,), level), tx2], axis=-1)
            e1 = TP[:, 1] - TP[:, 0]
            e2 = TP[:, 2] - TP[:, 0]
            tarea = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
            xi_t = np.einsum("gij,gqj->gqi", Jinv, tx - origin[:, None, :])
            grp.tx = tx
            grp.tw = 2.0 * tarea[:, None] * r2.weights[None, :]
            grp.tphi = bu.evaluate(xi_t)
            grp.tpsi = bp.evaluate(xi_t)
        groups.append(grp)
    return SlabEval(k, slab, groups, r3, r2, bu, bp, bf)


@dataclass
class ConvectionField:
    """Advecting velocity of a Picard step.

    ``cell`` holds per-cell velocity coefficients (n_cells, 2, n_u) and
    ``facet`` per-Q-facet coefficients (n_qfacets, 2, n_f), indexed by the
    DofLayout Q position.
    """

    cell: np.ndarray
    facet: np.ndarray
    q_index: np.ndarray

    @classmethod
    def zero(cls, layout):
        return cls(np.zeros((layout.n_cells, 2, layout.n_u)),
                   np.zeros((len(layout.q_facets), 2, layout.n_f)), layout.q_index)

    @classmethod
    def from_state(cls, state, layout):
        return cls(state.U.copy(), state.Ubar.copy(), layout.q_index)

    def at_cell_points(self, grp):
        return np.einsum("gcn,qn->gqc", self.cell[grp.cells], grp.phi)

    def at_facet_points(self, grp):
        """Cell-side trace w and facet field wbar at Q-facet points, (G, nQ, nqf, 2) each."""
        w = np.einsum("gcn,gfqn->gfqc", self.cell[grp.cells], grp.fphi)
        wb = np.einsum("gfcm,qm->gfqc", self.facet[self.q_index[grp.qfacet]], grp.chi)
        return w, wb

    def divergence_residual(self, grp):
        """Max |div w| at the cell quadrature points of a batch."""
        div = np.einsum("gcn,gqnc->gq", self.cell[grp.cells], grp.grad[..., 1:])
        return float(np.abs(div).max()) if div.size else 0.0


def _add_vector_block(L, grp, rows_of, cols_of, block, comps=(0, 1)):
    for c in comps:
        L[:, rows_of(c), cols_of(c)] += block


def local_a(grp, nu, alpha):
    """Viscous form: volume gradient term, penalty and symmetric consistency terms on Q_K."""
    L = np.zeros((grp.size, grp.n_local, grp.n_local))
    gs = grp.grad[..., 1:]  # spatial gradients (G, nq, n, 2)
    G, nq, n, _ = gs.shape
    w2 = np.repeat(grp.wq, 2, axis=1)
    gflat = np.swapaxes(gs, 2, 3).reshape(G, nq * 2, n)
    K = nu * weighted_gram(w2, gflat, gflat)
    _add_vector_block(L, grp, grp.u, grp.u, K)
    tau = nu * alpha / grp.diam
    for j in range(grp.n_q):
        W = grp.fw[:, j]
        phi = grp.fphi[:, j]
        dn = np.einsum("gqna,ga->gqn", grp.fgrad[:, j, ..., 1:], grp.normal[:, j, 1:])
        chi = np.broadcast_to(grp.chi, (grp.size,) + grp.chi.shape)
        t = tau[:, None, None]
        vv = t * weighted_gram(W, phi, phi) - nu * (weighted_gram(W, dn, phi) + weighted_gram(W, phi, dn))
        vub = -t * weighted_gram(W, phi, chi) + nu * weighted_gram(W, dn, chi)
        vbu = -t * weighted_gram(W, chi, phi) + nu * weighted_gram(W, chi, dn)
        vbub = t * weighted_gram(W, chi, chi)
        _add_vector_block(L, grp, grp.u, grp.u, vv)
        _add_vector_block(L, grp, grp.u, lambda c: grp.ubar(j, c), vub)
        _add_vector_block(L, grp, lambda c: grp.ubar(j, c), grp.u, vbu)
        _add_vector_block(L, grp, lambda c: grp.ubar(j, c), lambda c: grp.ubar(j, c), vbub)
    return L


def local_b(grp):
    """Pressure-velocity coupling: +b(p*, v*) and -b(q*, u*) in one local matrix."""
    L = np.zeros((grp.size, grp.n_local, grp.n_local))
    psi = np.broadcast_to(grp.psi, (grp.size,) + grp.psi.shape)
    for c in range(2):
        d = grp.grad[..., 1 + c]
        Bvp = -weighted_gram(grp.wq, d, psi)
        L[:, grp.u(c), grp.p] += Bvp
        L[:, grp.p, grp.u(c)] -= np.swapaxes(Bvp, 1, 2)
    chi = np.broadcast_to(grp.chi, (grp.size,) + grp.chi.shape)
    for j in range(grp.n_q):
        W = grp.fw[:, j]
        phi = grp.fphi[:, j]
        pc = weighted_gram(W, phi, chi)
        cc = weighted_gram(W, chi, chi)
        for c in range(2):
            nc = grp.normal[:, j, 1 + c][:, None, None]
            L[:, grp.u(c), grp.pbar(j)] += nc * pc
            L[:, grp.ubar(j, c), grp.pbar(j)] -= nc * cc
            L[:, grp.pbar(j), grp.u(c)] -= nc * np.swapaxes(pc, 1, 2)
            L[:, grp.pbar(j), grp.ubar(j, c)] += nc * cc
    return L


def upwind_flux_H(u, ubar, w, n_t, n):
    """(n_t + w.n)(u + lam (ubar - u)) with lam = 1 on inflow (n_t + w.n < 0)."""
    u = np.asarray(u, dtype=float)
    ubar = np.asarray(ubar, dtype=float)
    beta = n_t + np.sum(np.asarray(w) * np.asarray(n), axis=-1)
    lam = (beta < 0.0).astype(float)
    return beta[..., None] * (u + lam[..., None] * (ubar - u))


def _normal_speed(grp, j, w, ale):
    n = grp.normal[:, j]
    if ale:
        return np.einsum("gqc,gc->gq", w - grp.vg[:, j, None, :], n[:, 1:])
    return n[:, None, 0] + np.einsum("gqc,gc->gq", w, n[:, 1:])


def local_t(grp, conv, ale=False):
    """Convective trilinear form with upwind flux, linear in u* for fixed w*.

    With ``ale=True`` the normal speed n_t + w.n on Q-facets is evaluated as
    (w - v_g).n from the facet grid velocity.
    """
    L = np.zeros((grp.size, grp.n_local, grp.n_local))
    w_c = conv.at_cell_points(grp)
    adv = grp.grad[..., 0] + np.einsum("gqc,gqnc->gqn", w_c, grp.grad[..., 1:])
    phi = np.broadcast_to(grp.phi, (grp.size,) + grp.phi.shape)
    _add_vector_block(L, grp, grp.u, grp.u, -weighted_gram(grp.wq, adv, phi))
    if grp.kind == CellKind.TOP:
        _add_vector_block(L, grp, grp.u, grp.u, weighted_gram(grp.tw, grp.tphi, grp.tphi))
    w_f, wb_f = conv.at_facet_points(grp)
    chi = np.broadcast_to(grp.chi, (grp.size,) + grp.chi.shape)
    for j in range(grp.n_q):
        W = grp.fw[:, j]
        fphi = grp.fphi[:, j]
        beta = _normal_speed(grp, j, w_f[:, j], ale)
        bp = W * np.maximum(beta, 0.0)
        bm = W * np.minimum(beta, 0.0)
        _add_vector_block(L, grp, grp.u, grp.u, weighted_gram(bp, fphi, fphi))
        _add_vector_block(L, grp, grp.u, lambda c: grp.ubar(j, c), weighted_gram(bm, fphi, chi))
        _add_vector_block(L, grp, lambda c: grp.ubar(j, c), grp.u, -weighted_gram(bp, chi, fphi))
        cc = -weighted_gram(bm, chi, chi)
        neu = grp.qkind[:, j] == FacetKind.NEUMANN
        if np.any(neu):
            beta_b = _normal_speed(grp, j, wb_f[:, j], ale)
            cc += weighted_gram(W * np.maximum(beta_b, 0.0) * neu[:, None], chi, chi)
        _add_vector_block(L, grp, lambda c: grp.ubar(j, c), lambda c: grp.ubar(j, c), cc)
    return L


def local_t_ale(grp, conv):
    return local_t(grp, conv, ale=True)


def local_rhs(grp, f=None, g=None, trace=None):
    """Loads: int_K f.v, -int_S g.vbar on Neumann facets, int_{K^n} u^-.v.

    ``f(X)`` and ``g(X, normal)`` take space-time points (..., 3); ``trace`` is a
    TraceField at t^n (only used by the batch owning bottom facets).
    """
    F = np.zeros((grp.size, grp.n_local))
    if f is not None:
        fv = np.asarray(f(grp.xq), dtype=float)  # (G, nq, 2)
        for c in range(2):
            F[:, grp.u(c)] += np.einsum("gq,gq,qn->gn", grp.wq, fv[..., c], grp.phi)
    if g is not None:
        for j in range(grp.n_q):
            neu = grp.qkind[:, j] == FacetKind.NEUMANN
            if not np.any(neu):
                continue
            idx = np.flatnonzero(neu)
            nrm = np.broadcast_to(grp.normal[idx, j, None, :], grp.fx[idx, j].shape)
            gv = np.asarray(g(grp.fx[idx, j], nrm), dtype=float)
            for c in range(2):
                F[idx, grp.ubar(j, c)] -= np.einsum("gq,gq,qm->gm", grp.fw[idx, j], gv[..., c], grp.chi)
    if trace is not None and grp.kind == CellKind.BOTTOM:
        um = trace.evaluate_reference(grp.prism, grp.chi)
        for c in range(2):
            F[:, grp.u(c)] += np.einsum("gq,gq,gqn->gn", grp.tw, um[..., c], grp.tphi)
    return F
