"""Test problems: exact solutions, boundary data and case construction.

All space-time callables take points ``X[..., 3]`` ordered (t, x1, x2).
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dofs import BoundaryData
from .mesh import BoundaryKind, DomainMotion, SinusoidalMotion, SpatialMesh, StaticMotion, triangulate_unit_square


@dataclass(frozen=True)
class ExactSolution:
    """Smooth velocity/pressure pair with its spatial velocity gradient and forcing.

    ``grad_u(X)[..., i, j]`` is d u_i / d x_j.
    """

    u: Callable
    p: Callable
    grad_u: Callable
    f: Callable

    def at_time(self, t):
        """Spatial velocity field x -> u(t, x)."""
        def u0(x):
            x = np.asarray(x, dtype=float)
            X = np.concatenate([np.full(x.shape[:-1] + (1,), t), x], axis=-1)
            return self.u(X)
        return u0


def neumann_data(exact, nu):
    """Outflow Neumann data g = min(n_t + u.n, 0) u + (p I - nu grad u) n."""
    def g(X, normal):
        normal = np.asarray(normal, dtype=float)
        n_t, n = normal[..., 0], normal[..., 1:]
        u = exact.u(X)
        un = n_t + np.sum(u * n, axis=-1)
        flux = np.minimum(un, 0.0)[..., None] * u
        return flux + exact.p(X)[..., None] * n - nu * np.einsum("...ij,...j->...i", exact.grad_u(X), n)
    return g


def _split(X):
    X = np.asarray(X, dtype=float)
    return X[..., 0], X[..., 1], X[..., 2]


def manufactured(nu):
    """Exact solution u = (e^t - 1)(sin pi x1 sin pi x2, cos pi x1 cos pi x2),
    p = (2 + cos t) sin pi x1 cos pi x2, with the matching body force."""
    pi = np.pi

    def u(X):
        t, x1, x2 = _split(X)
        s = np.expm1(t)
        return np.stack([s * np.sin(pi * x1) * np.sin(pi * x2), s * np.cos(pi * x1) * np.cos(pi * x2)], axis=-1)

    def p(X):
        t, x1, x2 = _split(X)
        return (2.0 + np.cos(t)) * np.sin(pi * x1) * np.cos(pi * x2)

    def grad_u(X):
        t, x1, x2 = _split(X)
        s = pi * np.expm1(t)
        S1, C1, S2, C2 = np.sin(pi * x1), np.cos(pi * x1), np.sin(pi * x2), np.cos(pi * x2)
        row1 = np.stack([s * C1 * S2, s * S1 * C2], axis=-1)
        row2 = np.stack([-s * S1 * C2, -s * C1 * S2], axis=-1)
        return np.stack([row1, row2], axis=-2)

    def f(X):
        t, x1, x2 = _split(X)
        s = np.expm1(t)
        e = np.exp(t)
        S1, C1, S2, C2 = np.sin(pi * x1), np.cos(pi * x1), np.sin(pi * x2), np.cos(pi * x2)
        c = 2.0 + np.cos(t)
        f1 = e * S1 * S2 + s * s * pi * S1 * C1 + c * pi * C1 * C2 + 2 * nu * pi * pi * s * S1 * S2
        f2 = e * C1 * C2 - s * s * pi * S2 * C2 - c * pi * S1 * S2 + 2 * nu * pi * pi * s * C1 * C2
        return np.stack([f1, f2], axis=-1)

    return ExactSolution(u, p, grad_u, f)


def manufactured_solution(t, x1, x2, nu=1e-4, normal=None):
    """Exact velocity, pressure, body force and Neumann data at the given points.

    ``normal`` is the space-time unit normal used for the Neumann data and
    defaults to the outward normal (0, 1, 0) of the boundary x1 = 1.
    """
    X = np.stack(np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, x1, x2))), axis=-1)
    ex = manufactured(nu)
    if normal is None:
        normal = np.array([0.0, 1.0, 0.0])
    normal = np.broadcast_to(np.asarray(normal, dtype=float), X.shape)
    return ex.u(X), ex.p(X), ex.f(X), neumann_data(ex, nu)(X, normal)


def uniform_flow(c=(1.0, 0.5)):
    c = np.asarray(c, dtype=float)

    def u(X):
        return np.broadcast_to(c, np.shape(X)[:-1] + (2,)).copy()

    def zero(X):
        return np.zeros(np.shape(X)[:-1])

    def grad(X):
        return np.zeros(np.shape(X)[:-1] + (2, 2))

    def f(X):
        return np.zeros(np.shape(X)[:-1] + (2,))

    return ExactSolution(u, zero, grad, f)


def vortex_initial(x):
    """Divergence-free field (d psi/dx2, -d psi/dx1) with psi = sin^2(pi x1) sin^2(pi x2)."""
    x = np.asarray(x, dtype=float)
    a, b = np.pi * x[..., 0], np.pi * x[..., 1]
    return np.stack([np.pi * np.sin(a) ** 2 * np.sin(2 * b), -np.pi * np.sin(2 * a) * np.sin(b) ** 2], axis=-1)


@dataclass
class Problem:
    name: str
    reference_mesh: SpatialMesh
    motion: DomainMotion
    data: BoundaryData
    f: Optional[Callable] = None
    exact: Optional[ExactSolution] = None


def all_dirichlet(mesh):
    tags = np.full(len(mesh.boundary_edges), BoundaryKind.DIRICHLET, dtype=np.int64)
    return SpatialMesh(mesh.vertices, mesh.triangles, mesh.boundary_edges, tags)


def make_problem(case, nx=8, nu=1e-4, mesh=None, moving=True, t0=0.0):
    """Build one of the supported cases.

    ``manufactured``: exact solution above, Neumann on x1 = 1, Dirichlet elsewhere.
    ``uniform-flow``: constant velocity (1, 0.5), zero pressure.
    ``energy-decay``: f = 0, homogeneous Dirichlet on the whole boundary, vortex initial data.
    ``external-mesh``: the manufactured data on a triangulation read from file
    (pass ``mesh``), kept static.
    """
    motion = SinusoidalMotion() if moving else StaticMotion()
    if case == "manufactured":
        ex = manufactured(nu)
        ref = triangulate_unit_square(nx) if mesh is None else mesh
        data = BoundaryData(ex.u, neumann_data(ex, nu), ex.at_time(t0))
        return Problem(case, ref, motion, data, ex.f, ex)
    if case == "uniform-flow":
        ex = uniform_flow()
        ref = triangulate_unit_square(nx) if mesh is None else mesh
        data = BoundaryData(ex.u, neumann_data(ex, nu), ex.at_time(t0))
        return Problem(case, ref, motion, data, None, ex)
    if case == "energy-decay":
        ref = all_dirichlet(triangulate_unit_square(nx) if mesh is None else mesh)
        data = BoundaryData(lambda X: np.zeros(np.shape(X)[:-1] + (2,)), None, vortex_initial)
        return Problem(case, ref, motion, data, None, None)
    if case == "external-mesh":
        if mesh is None:
            raise ValueError("external-mesh case requires a mesh")
        ex = manufactured(nu)
        data = BoundaryData(ex.u, neumann_data(ex, nu), ex.at_time(t0))
        return Problem(case, mesh, StaticMotion(), data, ex.f, ex)
    raise ValueError(f"unknown case {case!r}")
