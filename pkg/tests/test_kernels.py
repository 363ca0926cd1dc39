import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sthdg import _accel, kernels


def both(fn, *args):
    saved = _accel.USE_NUMBA
    try:
        _accel.USE_NUMBA = False
        ref = fn(*args)
        _accel.USE_NUMBA = _accel.NUMBA_AVAILABLE
        fast = fn(*args)
    finally:
        _accel.USE_NUMBA = saved
    return ref, fast


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(1, 12), st.integers(1, 8), st.integers(1, 8), st.integers(0, 10_000))
def test_weighted_gram_paths_agree(G, Q, I, J, seed):
    rng = np.random.default_rng(seed)
    w, a, b = rng.normal(size=(G, Q)), rng.normal(size=(G, Q, I)), rng.normal(size=(G, Q, J))
    ref, fast = both(kernels.weighted_gram, w, a, b)
    assert np.allclose(ref, fast, atol=1e-12)
    assert np.allclose(ref, np.einsum("gq,gqi,gqj->gij", w, a, b), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 10), st.integers(1, 6), st.integers(0, 10_000))
def test_condense_paths_agree(G, n, m, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(G, n, n)) + n * np.eye(n)
    B, C = rng.normal(size=(G, n, m)), rng.normal(size=(G, m, n))
    D, F, Fb = rng.normal(size=(G, m, m)), rng.normal(size=(G, n)), rng.normal(size=(G, m))
    ref, fast = both(kernels.condense, A, B, C, D, F, Fb)
    for r, f in zip(ref, fast):
        assert np.allclose(r, f, atol=1e-10)
    X, y, S, g, ok = ref
    assert ok.all()
    assert np.allclose(A @ X, B) and np.allclose(S, D - C @ np.linalg.solve(A, B))
    wbar = rng.normal(size=(G, m))
    r, f = both(kernels.back_substitute, X, y, wbar)
    assert np.allclose(r, f)
    assert np.allclose(np.einsum("gij,gj->gi", A, r), F - np.einsum("gij,gj->gi", B, wbar))


@pytest.mark.parametrize("numba", [False, True])
def test_singular_cell_flagged(numba):
    A = np.stack([np.eye(3), np.zeros((3, 3))])
    B = np.ones((2, 3, 2))
    C = np.ones((2, 2, 3))
    saved = _accel.USE_NUMBA
    try:
        _accel.USE_NUMBA = numba and _accel.NUMBA_AVAILABLE
        ok = kernels.condense(A, B, C, np.zeros((2, 2, 2)), np.ones((2, 3)), np.ones((2, 2)))[-1]
    finally:
        _accel.USE_NUMBA = saved
    assert ok.tolist() == [True, False]


def test_environment_flag(monkeypatch):
    import importlib

    monkeypatch.setenv("STHDG_DISABLE_NUMBA", "1")
    mod = importlib.reload(_accel)
    try:
        assert mod.USE_NUMBA is False
    finally:
        monkeypatch.delenv("STHDG_DISABLE_NUMBA")
        importlib.reload(_accel)
