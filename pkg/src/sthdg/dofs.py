"""DOF numbering for the cell and facet spaces of one slab.

Cell unknowns W = [U, P]: per cell 2*C(k+3,3) velocity and C(k+2,3) pressure
coefficients. Facet unknowns Wbar = [Ubar, Pbar]: per Q-facet 2*C(k+2,2)
velocity and C(k+2,2) pressure coefficients. Bottom and top facets carry no
facet unknowns.
"""

from dataclasses import dataclass, field
from math import comb
from typing import Callable, Optional

import numpy as np

from .basis import make_basis
from .mesh import FacetKind
from .quadrature import make_quadrature


@dataclass(frozen=True)
class DofLayout:
    k: int
    n_cells: int
    q_facets: np.ndarray  # global facet id of each Q-facet, in numbering order
    q_index: np.ndarray  # facet id -> Q position, -1 for bottom/top
    constrained: np.ndarray = field(repr=False)  # bool mask over Wbar

    @property
    def n_u(self):
        return comb(self.k + 3, 3)

    @property
    def n_p(self):
        return comb(self.k + 2, 3)

    @property
    def n_f(self):
        return comb(self.k + 2, 2)

    @property
    def n_cell_local(self):
        return 2 * self.n_u + self.n_p

    @property
    def n_U(self):
        return 2 * self.n_u * self.n_cells

    @property
    def n_P(self):
        return self.n_p * self.n_cells

    @property
    def n_Ubar(self):
        return 2 * self.n_f * len(self.q_facets)

    @property
    def n_Pbar(self):
        return self.n_f * len(self.q_facets)

    @property
    def n_W(self):
        return self.n_U + self.n_P

    @property
    def n_Wbar(self):
        return self.n_Ubar + self.n_Pbar

    def cell_dofs(self, cells):
        """W indices [u1, u2, p] of each cell, shape (len(cells), n_cell_local)."""
        cells = np.asarray(cells)
        u = 2 * self.n_u * cells[:, None] + np.arange(2 * self.n_u)
        p = self.n_U + self.n_p * cells[:, None] + np.arange(self.n_p)
        return np.concatenate([u, p], axis=1)

    def facet_dofs(self, facets):
        """Wbar indices [ubar1, ubar2, pbar] of each facet id, shape (..., 3*n_f)."""
        q = self.q_index[np.asarray(facets)]
        if np.any(q < 0):
            raise ValueError("bottom/top facets carry no facet DOFs")
        m = self.n_f
        u = 2 * m * q[..., None] + np.arange(2 * m)
        p = self.n_Ubar + m * q[..., None] + np.arange(m)
        return np.concatenate([u, p], axis=-1)

    def split_cell(self, W):
        """(U, P) views of a cell vector shaped (n_cells, 2, n_u) and (n_cells, n_p)."""
        U = W[: self.n_U].reshape(self.n_cells, 2, self.n_u)
        P = W[self.n_U:].reshape(self.n_cells, self.n_p)
        return U, P

    def split_facet(self, Wbar):
        nq = len(self.q_facets)
        Ub = Wbar[: self.n_Ubar].reshape(nq, 2, self.n_f)
        Pb = Wbar[self.n_Ubar:].reshape(nq, self.n_f)
        return Ub, Pb


def build_layout(slab, k):
    """Deterministic cell-major then facet-major numbering for one slab."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = slab.q_facets()
    q_index = np.full(slab.n_facets, -1, dtype=np.int64)
    q_index[q] = np.arange(len(q))
    m = comb(k + 2, 2)
    constrained = np.zeros(3 * m * len(q), dtype=bool)
    dirichlet = np.flatnonzero(slab.facet_kind[q] == FacetKind.DIRICHLET)
    idx = 2 * m * dirichlet[:, None] + np.arange(2 * m)
    constrained[idx.ravel()] = True
    for arr in (q, q_index, constrained):
        arr.setflags(write=False)
    return DofLayout(k, slab.n_cells, q, q_index, constrained)


@dataclass(frozen=True)
class BoundaryData:
    """Data of the boundary value problem.

    ``dirichlet(X)`` and ``neumann(X, normal)`` take space-time points (..., 3)
    ordered (t, x1, x2) and unit space-time normals; ``initial(x)`` takes
    spatial points (..., 2). All return velocities (..., 2).
    """

    dirichlet: Optional[Callable] = None
    neumann: Optional[Callable] = None
    initial: Optional[Callable] = None


def facet_points(slab, facets, ref_points):
    """Physical points of reference triangle points on facets (canonical vertex order)."""
    P = slab.vertices[slab.facets[np.asarray(facets)]]  # (nf, 3, 3)
    s = ref_points[:, 0]
    r = ref_points[:, 1]
    return (P[:, None, 0] + s[None, :, None] * (P[:, None, 1] - P[:, None, 0])
            + r[None, :, None] * (P[:, None, 2] - P[:, None, 0]))


def interpolate_dirichlet(layout, data, slab, exactness=None):
    """L2 projection of the Dirichlet velocity onto [P_k(S)]^2 per Dirichlet facet.

    Returns the full-length Wbar vector with the constrained entries filled in
    and zeros elsewhere.
    """
    values = np.zeros(layout.n_Wbar)
    q = layout.q_facets
    dfac = q[slab.facet_kind[q] == FacetKind.DIRICHLET]
    if data is None or data.dirichlet is None or len(dfac) == 0:
        return values
    k = layout.k
    rule = make_quadrature(2, exactness or max(3 * k + 1, 2 * k + 3))
    chi = make_basis(k, 2).evaluate(rule.points)  # (nq, m), orthonormal on reference
    X = facet_points(slab, dfac, rule.points)
    u = np.asarray(data.dirichlet(X), dtype=float)  # (nf, nq, 2)
    coef = np.einsum("q,fqc,qm->fcm", rule.weights, u, chi)
    dofs = layout.facet_dofs(dfac)[:, : 2 * layout.n_f]
    values[dofs.ravel()] = coef.reshape(len(dfac), -1).ravel()
    return values
