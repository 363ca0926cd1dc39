"""Collapsed-coordinate (conical product) quadrature on reference simplices.

Reference triangle: (0,0), (1,0), (0,1); measure 1/2.
Reference tetrahedron: (0,0,0), (1,0,0), (0,1,0), (0,0,1); measure 1/6.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi

from .errors import UnsupportedDegree

MAX_EXACTNESS = 20
REFERENCE_MEASURE = {2: 0.5, 3: 1.0 / 6.0}


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, dim)
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return len(self.weights)


def _gauss_jacobi01(n, alpha):
    """Gauss-Jacobi nodes/weights on [0, 1] for the weight (1 - x)**alpha."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def make_quadrature(dim, exactness):
    """Quadrature on the reference simplex exact for total degree ``exactness``."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if not 0 <= exactness <= MAX_EXACTNESS:
        raise UnsupportedDegree(f"quadrature exactness {exactness} outside 0..{MAX_EXACTNESS}")
    n = max(1, (exactness + 2) // 2)
    s, ws = _gauss_jacobi01(n, 0.0)
    r, wr = _gauss_jacobi01(n, 1.0)
    if dim == 2:
        S, R = np.meshgrid(s, r, indexing="ij")
        W = np.outer(ws, wr)
        pts = np.column_stack([(S * (1.0 - R)).ravel(), R.ravel()])
    else:
        q, wq = _gauss_jacobi01(n, 2.0)
        S, R, Q = np.meshgrid(s, r, q, indexing="ij")
        W = ws[:, None, None] * wr[None, :, None] * wq[None, None, :]
        pts = np.column_stack(
            [(S * (1.0 - R) * (1.0 - Q)).ravel(), (R * (1.0 - Q)).ravel(), Q.ravel()]
        )
    pts.setflags(write=False)
    weights = W.ravel().copy()
    weights.setflags(write=False)
    return QuadratureRule(pts, weights, exactness)


def monomial_integral(exponents):
    """Exact integral of prod(x_i**a_i) over the reference simplex of len(exponents) dims."""
    d = len(exponents)
    num = 1
    for a in exponents:
        num *= factorial(a)
    return num / factorial(sum(exponents) + d)
