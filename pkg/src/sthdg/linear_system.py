"""Slab block system, static condensation and facet solve.

For one Picard step the slab system is

    [A B] [W   ]   [F   ]
    [C D] [Wbar] = [Fbar]

with A block diagonal over cells. Cell unknowns are eliminated cell by cell,
the facet system (D - C A^-1 B) Wbar = Fbar - C A^-1 F is solved with a
sparse LU factorisation and W is recovered per cell.
"""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularGlobal, SingularLocalBlock
from .forms import local_a, local_b, local_rhs, local_t
from .kernels import back_substitute, condense, scatter_add
from .mesh import FacetKind

PIVOT_RATIO_TOL = 1e-13
REFINE_STEPS = 1
KRYLOV_TOL = 1e-13
MAX_KRYLOV = 20
RESIDUAL_TOL = 1e-10
NULL_REGULARISATION = 1e-9
NULL_TOL = 1e-10


@dataclass
class GroupBlocks:
    cells: np.ndarray
    cell_dofs: np.ndarray  # (G, nc) W indices
    facet_dofs: np.ndarray  # (G, nf) Wbar indices
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray
    Fbar: np.ndarray
    X: Optional[np.ndarray] = None  # A^-1 B
    y: Optional[np.ndarray] = None  # A^-1 F


@dataclass
class FacetPattern:
    """CSR structure of the facet matrix and where each local entry lands in it."""

    indptr: np.ndarray
    indices: np.ndarray
    positions: list  # per block, (G, m, m) indices into the CSR data array

    @property
    def nnz(self):
        return len(self.indices)


def facet_pattern(blocks, n):
    keys = [(fd[:, :, None] * n + fd[:, None, :]).ravel() for fd in (b.facet_dofs for b in blocks)]
    unique, inverse = np.unique(np.concatenate(keys), return_inverse=True)
    rows = unique // n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    positions, start = [], 0
    for b, k in zip(blocks, keys):
        m = b.facet_dofs.shape[1]
        positions.append(inverse[start:start + k.size].reshape(-1, m, m))
        start += k.size
    return FacetPattern(indptr, (unique % n).astype(np.int64), positions)


@dataclass
class SlabSystem:
    layout: object
    blocks: list
    fixed: np.ndarray  # bool mask over Wbar of prescribed values
    fixed_values: np.ndarray  # full-length Wbar vector, meaningful where fixed
    pins: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    S: Optional[sp.csr_matrix] = None
    g: Optional[np.ndarray] = None
    timings: dict = field(default_factory=dict)
    solver: Optional[object] = None
    pattern: Optional[FacetPattern] = None
    refactored: bool = True
    krylov_iterations: int = 0

    @property
    def free(self):
        return np.flatnonzero(~self.fixed)

    def fix(self, indices):
        """Prescribe zero at the given Wbar indices."""
        indices = np.asarray(indices, dtype=np.int64)
        self.fixed[indices] = True
        self.fixed_values[indices] = 0.0
        self.pins = np.union1d(self.pins, indices)


@dataclass
class SlabState:
    U: np.ndarray  # (n_cells, 2, n_u)
    P: np.ndarray  # (n_cells, n_p)
    Ubar: np.ndarray  # (n_q, 2, n_f)
    Pbar: np.ndarray  # (n_q, n_f)

    @property
    def W(self):
        return np.concatenate([self.U.ravel(), self.P.ravel()])

    @property
    def Wbar(self):
        return np.concatenate([self.Ubar.ravel(), self.Pbar.ravel()])

    @classmethod
    def from_vectors(cls, layout, W, Wbar):
        U, P = layout.split_cell(W)
        Ub, Pb = layout.split_facet(Wbar)
        return cls(U.copy(), P.copy(), Ub.copy(), Pb.copy())


def stokes_blocks(ev, nu, alpha, f=None, g=None, trace=None):
    """Per-batch (matrix, load) pairs of the parts that do not depend on the advecting field."""
    return [(local_a(grp, nu, alpha) + local_b(grp), local_rhs(grp, f=f, g=g, trace=trace))
            for grp in ev.groups]


def assemble(ev, layout, nu, alpha, conv=None, f=None, g=None, trace=None,
             dirichlet_values=None, ale=False, pin_pressure=False, base=None, pins=None):
    """Local blocks of every cell for one linear(ised) slab problem.

    ``conv=None`` gives the Stokes-only system (convective form omitted).
    ``dirichlet_values`` is a full-length Wbar vector whose entries on
    Dirichlet facet velocity DOFs are imposed. When ``pin_pressure`` is set and
    the slab has no Neumann facet, the pressure is determined only up to a few
    global modes; that many facet-pressure DOFs (``pins``, or ones found by
    :func:`pressure_null_pins`) are then fixed to zero.
    ``base`` may hold the output of :func:`stokes_blocks` for the same data,
    in which case only the convective form is evaluated.
    """
    t0 = time.perf_counter()
    if base is None:
        base = stokes_blocks(ev, nu, alpha, f=f, g=g, trace=trace)
    blocks = []
    for grp, (L0, R) in zip(ev.groups, base):
        L = L0 + local_t(grp, conv, ale=ale) if conv is not None else L0
        nc = grp.n_cell_local
        cdofs = layout.cell_dofs(grp.cells)
        fdofs = layout.facet_dofs(grp.qfacet).reshape(grp.size, -1)
        blocks.append(GroupBlocks(
            cells=grp.cells, cell_dofs=cdofs, facet_dofs=fdofs,
            A=L[:, :nc, :nc], B=L[:, :nc, nc:], C=L[:, nc:, :nc], D=L[:, nc:, nc:],
            F=R[:, :nc], Fbar=R[:, nc:],
        ))
    fixed = layout.constrained.copy()
    values = np.zeros(layout.n_Wbar) if dirichlet_values is None else np.array(dirichlet_values, dtype=float)
    values[~fixed] = 0.0
    system = SlabSystem(layout, blocks, fixed, values)
    if pin_pressure and not np.any(ev.slab.facet_kind == FacetKind.NEUMANN):
        system.fix(pressure_null_pins(system) if pins is None else pins)
    system.timings["assembly"] = time.perf_counter() - t0
    return system


def condense_system(system):
    """Per-cell elimination and assembly of the global facet system S, g."""
    t0 = time.perf_counter()
    n = system.layout.n_Wbar
    if system.pattern is None:
        system.pattern = facet_pattern(system.blocks, n)
    pat = system.pattern
    idx, vals, gidx, gvals = [], [], [], []
    for blk, pos in zip(system.blocks, pat.positions):
        X, y, S, gl, ok = condense(blk.A, blk.B, blk.C, blk.D, blk.F, blk.Fbar)
        if not ok.all():
            raise SingularLocalBlock(blk.cells[np.flatnonzero(~ok)[0]])
        blk.X, blk.y = X, y
        idx.append(pos.ravel())
        vals.append(S.ravel())
        gidx.append(blk.facet_dofs.ravel())
        gvals.append(gl.ravel())
    data = scatter_add(pat.nnz, np.concatenate(idx), np.concatenate(vals))
    system.S = sp.csr_matrix((data, pat.indices, pat.indptr), shape=(n, n))
    system.g = scatter_add(n, np.concatenate(gidx), np.concatenate(gvals))
    system.timings["condensation"] = time.perf_counter() - t0
    return system


def fill_reducing_order(A):
    """Symmetric fill-reducing permutation of a sparse matrix, or None.

    Uses approximate minimum degree on the pattern of A + A^T when cvxopt is
    installed; callers fall back to SuperLU's column ordering otherwise.
    """
    try:
        from cvxopt import amd, spmatrix
    except ImportError:
        return None
    P = (abs(A) + abs(A.T)).tocoo()
    low = P.row >= P.col
    pattern = spmatrix(1.0, P.row[low].astype(int).tolist(), P.col[low].astype(int).tolist(), A.shape)
    return np.asarray(amd.order(pattern), dtype=np.int64).ravel()


class FacetSolver:
    """Sparse LU of the reduced facet matrix restricted to free DOFs."""

    def __init__(self, S_ff):
        self.shape = S_ff.shape
        perm = fill_reducing_order(S_ff) if S_ff.shape[0] > 1 else None
        try:
            if perm is None:
                self.perm = None
                self.lu = spla.splu(S_ff.tocsc(), permc_spec="COLAMD")
            else:
                self.perm = perm
                self.lu = spla.splu(S_ff[perm][:, perm].tocsc(), permc_spec="NATURAL",
                                    diag_pivot_thresh=0.1, options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SingularGlobal(f"facet system is singular: {exc}") from exc
        d = np.abs(self.lu.U.diagonal())
        if d.size and (d.min() <= PIVOT_RATIO_TOL * d.max() or not np.isfinite(d).all()):
            raise SingularGlobal(
                f"facet system is numerically singular (pivot ratio {d.min() / d.max():.2e})")

    def solve(self, rhs):
        if self.perm is None:
            return self.lu.solve(rhs)
        x = np.empty_like(rhs)
        x[self.perm] = self.lu.solve(rhs[self.perm])
        return x


def _direct(S_ff, rhs):
    solver = FacetSolver(S_ff)
    x = solver.solve(rhs)
    for _ in range(REFINE_STEPS):
        x += solver.solve(rhs - S_ff @ x)
    return x, solver


def _preconditioned(S_ff, rhs, solver, x0):
    """GMRES on S_ff with an existing factorisation as preconditioner; None if it stalls."""
    M = spla.LinearOperator(S_ff.shape, matvec=solver.solve, dtype=float)
    its = [0]

    def count(_):
        its[0] += 1

    x, info = spla.gmres(S_ff, rhs, x0=x0, M=M, rtol=KRYLOV_TOL, atol=0.0, restart=MAX_KRYLOV,
                         maxiter=1, callback=count, callback_type="pr_norm")
    if info != 0:
        return None, its[0]
    return x, its[0]


def condense_and_solve(system, solver=None, x0=None):
    """Condense, factor and solve the facet system, then back-substitute.

    With ``solver`` (a FacetSolver of a nearby matrix) the facet system is
    solved by preconditioned GMRES, falling back to a fresh factorisation
    when that does not converge quickly. Returns the SlabState; the solver
    actually used is stored on ``system.solver``.
    """
    if system.S is None:
        condense_system(system)
    layout = system.layout
    t0 = time.perf_counter()
    free = system.free
    fixed = np.flatnonzero(system.fixed)
    S = system.S
    S_f = S[free]
    S_ff = S_f[:, free].tocsr()
    rhs = system.g[free] - S_f[:, fixed] @ system.fixed_values[fixed]
    rnorm = np.linalg.norm(rhs)
    x = None
    system.krylov_iterations = 0
    t1 = t0
    if solver is not None and rnorm > 0:
        guess = None if x0 is None else x0[free]
        x, system.krylov_iterations = _preconditioned(S_ff, rhs, solver, guess)
        if x is not None and np.linalg.norm(S_ff @ x - rhs) > RESIDUAL_TOL * rnorm:
            x = None
        t1 = time.perf_counter()
    system.refactored = x is None
    if x is None:
        x, solver = _direct(S_ff, rhs)
        t1 = time.perf_counter()
        if not np.all(np.isfinite(x)):
            raise SingularGlobal("facet solve produced non-finite values")
    res = np.linalg.norm(S_ff @ x - rhs) / max(rnorm, 1e-300)
    if res > 1e-8 and rnorm > 0:
        raise SingularGlobal(f"facet solve residual {res:.2e}")
    t2 = time.perf_counter()
    wbar = system.fixed_values.copy()
    wbar[free] = x
    W = np.zeros(layout.n_W)
    for blk in system.blocks:
        W[blk.cell_dofs] = back_substitute(blk.X, blk.y, wbar[blk.facet_dofs])
    t3 = time.perf_counter()
    system.solver = solver
    if system.refactored:
        system.timings.update(factorization=t1 - t0, solve=t2 - t1)
    else:
        system.timings.update(factorization=0.0, solve=t2 - t0)
    system.timings["back_substitution"] = t3 - t2
    return SlabState.from_vectors(layout, W, wbar)


def pressure_null_pins(system, n_probe=None, seed=0):
    """Facet-pressure DOFs whose pinning removes the null space of the facet system.

    A few steps of inverse iteration with a slightly regularised factorisation
    expose the null space; pivoted QR on its facet-pressure rows then picks as
    many well-conditioned DOFs as it has dimensions, so pinning them adds no
    constraint beyond fixing the null modes.
    """
    import scipy.linalg as sla

    if system.S is None:
        condense_system(system)
    lay = system.layout
    free = system.free
    S_ff = system.S[free][:, free].tocsr()
    is_p = free >= lay.n_Ubar
    scale = np.abs(S_ff.diagonal()).max()
    reg = S_ff + sp.diags(NULL_REGULARISATION * scale * is_p.astype(float))
    solver = FacetSolver(reg)
    m = n_probe or lay.k + 6
    Z = np.random.default_rng(seed).standard_normal((len(free), m))
    for _ in range(2):
        Z = np.column_stack([solver.solve(z) for z in Z.T])
        Z, _ = np.linalg.qr(Z)
    _, sig, Vt = np.linalg.svd(S_ff @ Z, full_matrices=False)
    null = sig <= NULL_TOL * scale
    if not null.any():
        return np.zeros(0, dtype=np.int64)
    N = Z @ Vt[null].T
    rows = np.flatnonzero(is_p)
    _, _, piv = sla.qr(N[rows].T, pivoting=True, mode="economic")
    return free[rows[piv[: int(null.sum())]]]


def full_matrix(system):
    """Uncondensed global matrix and load over [W; Wbar] (sparse)."""
    lay = system.layout
    nW = lay.n_W
    n = nW + lay.n_Wbar
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    for blk in system.blocks:
        idx = np.concatenate([blk.cell_dofs, nW + blk.facet_dofs], axis=1)
        L = np.block([[blk.A, blk.B], [blk.C, blk.D]])
        m = idx.shape[1]
        rows.append(np.repeat(idx, m, axis=1).ravel())
        cols.append(np.tile(idx, (1, m)).ravel())
        vals.append(L.ravel())
        np.add.at(rhs, idx.ravel(), np.concatenate([blk.F, blk.Fbar], axis=1).ravel())
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    return M, rhs


def dense_oracle_solve(system):
    """Solve the uncondensed system with a dense LU (for small meshes)."""
    lay = system.layout
    M, rhs = full_matrix(system)
    M = M.toarray()
    nW = lay.n_W
    fixed = np.zeros(len(rhs), dtype=bool)
    fixed[nW:] = system.fixed
    xfix = np.zeros(len(rhs))
    xfix[nW:] = system.fixed_values
    free = ~fixed
    b = rhs[free] - M[np.ix_(free, fixed)] @ xfix[fixed]
    x = xfix.copy()
    x[free] = np.linalg.solve(M[np.ix_(free, free)], b)
    return SlabState.from_vectors(lay, x[:nW], x[nW:])


def facet_residual(system, state):
    """Max abs of the facet-row residual C W + D Wbar - Fbar over free facet DOFs."""
    lay = system.layout
    W, Wbar = state.W, state.Wbar
    r = np.zeros(lay.n_Wbar)
    for blk in system.blocks:
        wc = W[blk.cell_dofs]
        wf = Wbar[blk.facet_dofs]
        loc = np.einsum("gij,gj->gi", blk.C, wc) + np.einsum("gij,gj->gi", blk.D, wf) - blk.Fbar
        np.add.at(r, blk.facet_dofs.ravel(), loc.ravel())
    free = ~system.fixed
    rf = np.abs(r[free])
    return float(rf.max(initial=0.0))


def full_residual(system, state):
    """Relative residual of the uncondensed system on free rows."""
    lay = system.layout
    M, rhs = full_matrix(system)
    x = np.concatenate([state.W, state.Wbar])
    free = np.ones(len(rhs), dtype=bool)
    free[lay.n_W:] = ~system.fixed
    r = (M @ x - rhs)[free]
    return float(np.linalg.norm(r) / max(np.linalg.norm(rhs[free]), 1e-300))


def export_matrix(matrix, path):
    """Write a sparse matrix in 1-based coordinate text format (row col value)."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")
