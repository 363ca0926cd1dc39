"""Per-cell dense kernels: weighted Gram products and static condensation.

Each public function dispatches to a numba-compiled loop nest or to a
vectorised numpy implementation, chosen by ``_accel.USE_NUMBA`` at call time
(set ``STHDG_DISABLE_NUMBA=1`` before import to force numpy).
"""

import numpy as np

from . import _accel
from ._accel import njit


@njit(cache=True)
def _gram_nb(w, a, b):
    G, Q, I = a.shape
    J = b.shape[2]
    out = np.zeros((G, I, J))
    for g in range(G):
        for q in range(Q):
            wq = w[g, q]
            if wq == 0.0:
                continue
            for i in range(I):
                ai = wq * a[g, q, i]
                for j in range(J):
                    out[g, i, j] += ai * b[g, q, j]
    return out


def _gram_np(w, a, b):
    return np.matmul(np.swapaxes(a * w[..., None], -1, -2), b)


def weighted_gram(w, a, b):
    """out[g, i, j] = sum_q w[g, q] a[g, q, i] b[g, q, j]."""
    w = np.ascontiguousarray(w, dtype=float)
    a = np.ascontiguousarray(np.broadcast_to(a, w.shape + a.shape[-1:]), dtype=float)
    b = np.ascontiguousarray(np.broadcast_to(b, w.shape + b.shape[-1:]), dtype=float)
    if _accel.USE_NUMBA:
        return _gram_nb(w, a, b)
    return _gram_np(w, a, b)


@njit(cache=True)
def _condense_nb(A, B, C, D, F, Fb):
    G, n, m = B.shape
    X = np.empty((G, n, m))
    y = np.empty((G, n))
    S = np.empty((G, m, m))
    g = np.empty((G, m))
    rhs = np.empty((n, m + 1))
    ok = np.ones(G, dtype=np.bool_)
    for c in range(G):
        rhs[:, :m] = B[c]
        rhs[:, m] = F[c]
        try:
            sol = np.linalg.solve(A[c], rhs)
        except Exception:
            ok[c] = False
            sol = np.zeros((n, m + 1))
        X[c] = sol[:, :m]
        y[c] = sol[:, m]
        S[c] = D[c] - C[c] @ X[c]
        g[c] = Fb[c] - C[c] @ y[c]
    return X, y, S, g, ok


def _condense_np(A, B, C, D, F, Fb):
    rhs = np.concatenate([B, F[..., None]], axis=-1)
    ok = np.ones(len(A), dtype=bool)
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        sol = np.zeros_like(rhs)
        for c in range(len(A)):
            try:
                sol[c] = np.linalg.solve(A[c], rhs[c])
            except np.linalg.LinAlgError:
                ok[c] = False
    X = sol[..., :-1]
    y = sol[..., -1]
    S = D - C @ X
    g = Fb - np.einsum("gij,gj->gi", C, y)
    return X, y, S, g, ok


def condense(A, B, C, D, F, Fb):
    """Eliminate the cell unknowns of every cell.

    Returns X = A^-1 B, y = A^-1 F, the local Schur complements S = D - C X,
    the reduced loads g = Fb - C y, and a per-cell success mask.
    """
    args = [np.ascontiguousarray(x, dtype=float) for x in (A, B, C, D, F, Fb)]
    if _accel.USE_NUMBA:
        X, y, S, g, ok = _condense_nb(*args)
    else:
        X, y, S, g, ok = _condense_np(*args)
    ok &= np.isfinite(X).all(axis=(1, 2)) & np.isfinite(y).all(axis=1)
    return X, y, S, g, ok


@njit(cache=True)
def _backsub_nb(X, y, wbar):
    G, n, m = X.shape
    out = np.empty((G, n))
    for c in range(G):
        for i in range(n):
            acc = y[c, i]
            for j in range(m):
                acc -= X[c, i, j] * wbar[c, j]
            out[c, i] = acc
    return out


def back_substitute(X, y, wbar):
    """Cell unknowns W_K = y_K - X_K Wbar_K for every cell."""
    if _accel.USE_NUMBA:
        return _backsub_nb(np.ascontiguousarray(X), np.ascontiguousarray(y), np.ascontiguousarray(wbar))
    return y - np.einsum("gij,gj->gi", X, wbar)


@njit(cache=True)
def _scatter_nb(n, index, values):
    out = np.zeros(n)
    for i in range(index.size):
        out[index[i]] += values[i]
    return out


def scatter_add(n, index, values):
    """out[index[i]] += values[i] into a zero vector of length n."""
    index = np.ascontiguousarray(index, dtype=np.int64).ravel()
    values = np.ascontiguousarray(values, dtype=float).ravel()
    if _accel.USE_NUMBA:
        return _scatter_nb(n, index, values)
    return np.bincount(index, weights=values, minlength=n)
