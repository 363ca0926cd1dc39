"""Orthonormal polynomial bases on reference simplices and affine cell maps.

The basis of P_k on the reference simplex is built from monomials and
orthonormalised against the exact reference Gram matrix (Cholesky), so it is
orthonormal in L2 of the reference simplex.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

from .errors import DegenerateMap, UnsupportedDegree
from .quadrature import monomial_integral

MAX_DEGREE = 4


def monomial_exponents(k, dim):
    """Exponent tuples of all monomials of total degree <= k, graded order."""
    out = []
    for total in range(k + 1):
        if dim == 2:
            for b in range(total + 1):
                out.append((total - b, b))
        else:
            for b in range(total + 1):
                for c in range(total - b + 1):
                    out.append((total - b - c, b, c))
    return np.array(out, dtype=np.int64).reshape(-1, dim)


@dataclass(frozen=True)
class BasisSet:
    """Orthonormal basis of P_k on the reference simplex of dimension ``dim``."""

    degree: int
    dim: int
    exponents: np.ndarray = field(repr=False)
    coeffs: np.ndarray = field(repr=False)  # (n_monomials, n_basis)

    @property
    def size(self):
        return self.coeffs.shape[1]

    def _monomials(self, pts):
        pts = np.asarray(pts, dtype=float)
        powers = pts[..., None, :] ** self.exponents  # (..., nm, dim)
        return powers.prod(axis=-1)

    def evaluate(self, pts):
        """Values at reference points, shape (..., size)."""
        return self._monomials(pts) @ self.coeffs

    def gradient(self, pts):
        """Reference gradients at points, shape (..., size, dim)."""
        pts = np.asarray(pts, dtype=float)
        e = self.exponents
        grads = []
        for d in range(self.dim):
            ed = e.copy()
            ed[:, d] = np.maximum(ed[:, d] - 1, 0)
            mono = (pts[..., None, :] ** ed).prod(axis=-1) * e[:, d]
            grads.append(mono @ self.coeffs)
        return np.stack(grads, axis=-1)


@lru_cache(maxsize=None)
def make_basis(k, dim):
    """Orthonormal basis of P_k on the reference triangle (dim=2) or tetrahedron (dim=3).

    Degree 0 is accepted as well since the cell pressure space for k=1 is P_0.
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if not 0 <= k <= MAX_DEGREE:
        raise UnsupportedDegree(f"polynomial degree {k} outside 0..{MAX_DEGREE}")
    exps = monomial_exponents(k, dim)
    n = len(exps)
    assert n == comb(k + dim, dim)
    gram = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            gram[i, j] = gram[j, i] = monomial_integral(tuple(exps[i] + exps[j]))
    L = np.linalg.cholesky(gram)
    coeffs = np.linalg.inv(L).T
    exps.setflags(write=False)
    coeffs.setflags(write=False)
    return BasisSet(k, dim, exps, coeffs)


@dataclass(frozen=True)
class AffineMap:
    """x = origin + jacobian @ xi for a straight simplex (vertices as rows)."""

    origin: np.ndarray
    jacobian: np.ndarray

    @classmethod
    def from_vertices(cls, vertices):
        v = np.asarray(vertices, dtype=float)
        return cls(v[0].copy(), (v[1:] - v[0]).T.copy())

    @property
    def det(self):
        return float(np.linalg.det(self.jacobian))

    @property
    def inverse_transpose(self):
        if abs(self.det) < 1e-14:
            raise DegenerateMap(f"affine map has |det| = {abs(self.det):.3e}")
        return np.linalg.inv(self.jacobian).T

    def __call__(self, xi):
        return self.origin + np.asarray(xi, dtype=float) @ self.jacobian.T

    def inverse(self, x):
        if abs(self.det) < 1e-14:
            raise DegenerateMap(f"affine map has |det| = {abs(self.det):.3e}")
        return np.linalg.solve(self.jacobian, (np.asarray(x, dtype=float) - self.origin).T).T


def physical_gradients(basis, amap, points):
    """Basis values and physical gradients at reference ``points``.

    For space-time cells the gradient components are ordered (d/dt, d/dx1, d/dx2),
    so ``grads[..., 0]`` is the temporal part and ``grads[..., 1:]`` the spatial one.
    """
    values = basis.evaluate(points)
    ref = basis.gradient(points)
    grads = ref @ amap.inverse_transpose.T
    return values, grads
