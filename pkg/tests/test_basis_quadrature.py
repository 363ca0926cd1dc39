import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sthdg.basis import AffineMap, make_basis, monomial_exponents, physical_gradients
from sthdg.errors import DegenerateMap, UnsupportedDegree
from sthdg.quadrature import MAX_EXACTNESS, REFERENCE_MEASURE, make_quadrature, monomial_integral


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("exactness", [0, 1, 4, 7, 10, 13])
def test_weights_sum_to_reference_measure(dim, exactness):
    rule = make_quadrature(dim, exactness)
    assert abs(rule.weights.sum() - REFERENCE_MEASURE[dim]) < 1e-14
    assert np.all(rule.weights > 0)
    assert np.all(rule.points >= 0) and np.all(rule.points.sum(axis=1) <= 1)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("exactness", [2, 5, 10])
def test_rule_integrates_all_monomials_up_to_its_degree(dim, exactness):
    rule = make_quadrature(dim, exactness)
    for e in monomial_exponents(exactness, dim):
        approx = np.sum(rule.weights * np.prod(rule.points ** e, axis=1))
        assert abs(approx - monomial_integral(tuple(e))) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=3, max_size=3))
def test_tetrahedron_monomials(exponents):
    rule = make_quadrature(3, sum(exponents))
    approx = np.sum(rule.weights * np.prod(rule.points ** np.array(exponents), axis=1))
    assert approx == pytest.approx(monomial_integral(tuple(exponents)), rel=1e-12, abs=1e-15)


def test_closed_form_examples():
    tet = make_quadrature(3, 3)
    tri = make_quadrature(2, 2)
    assert tet.weights.sum() == pytest.approx(1 / 6, abs=1e-15)
    # barycentric lambda_1 = x, lambda_2 = y
    assert np.sum(tri.weights * tri.points[:, 0] * tri.points[:, 1]) == pytest.approx(1 / 24, abs=1e-15)
    assert np.sum(tet.weights * tet.points[:, 0] ** 2 * tet.points[:, 1]) == pytest.approx(1 / 360, abs=1e-15)


def test_quadrature_rejects_unsupported_exactness():
    with pytest.raises(UnsupportedDegree):
        make_quadrature(3, MAX_EXACTNESS + 1)
    with pytest.raises(ValueError):
        make_quadrature(4, 2)


@pytest.mark.parametrize("k,dim,size", [(1, 3, 4), (2, 3, 10), (3, 2, 10), (4, 3, 35), (1, 2, 3)])
def test_basis_size(k, dim, size):
    assert make_basis(k, dim).size == size


@pytest.mark.parametrize("k", [5, -1])
def test_basis_rejects_degree(k):
    with pytest.raises(UnsupportedDegree):
        make_basis(k, 3)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_basis_is_orthonormal(k, dim):
    basis = make_basis(k, dim)
    rule = make_quadrature(dim, 2 * k)
    phi = basis.evaluate(rule.points)
    gram = phi.T @ (rule.weights[:, None] * phi)
    assert np.allclose(gram, np.eye(basis.size), atol=1e-12 if k < 4 else 1e-10)


@pytest.mark.parametrize("dim", [2, 3])
def test_basis_spans_polynomials(dim):
    k = 3
    basis = make_basis(k, dim)
    rng = np.random.default_rng(0)
    pts = rng.random((basis.size, dim)) / dim
    assert abs(np.linalg.det(basis.evaluate(pts))) > 1e-10
    # reproduce a random cubic exactly
    x = rng.random((50, dim)) / dim
    target = lambda p: 1 + p[..., 0] ** 3 - 2 * p[..., 0] * p[..., -1] + 0.5 * p[..., 1]
    rule = make_quadrature(dim, 2 * k)
    coef = (basis.evaluate(rule.points) * (rule.weights * target(rule.points))[:, None]).sum(axis=0)
    assert np.allclose(basis.evaluate(x) @ coef, target(x), atol=1e-12)


def test_linear_basis_reproduces_coordinates():
    basis = make_basis(1, 3)
    rule = make_quadrature(3, 2)
    pts = np.array([[0.1, 0.2, 0.3], [0.25, 0.25, 0.25]])
    for d in range(3):
        coef = basis.evaluate(rule.points).T @ (rule.weights * rule.points[:, d])
        assert np.allclose(basis.evaluate(pts) @ coef, pts[:, d], atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(2, 3), st.integers(0, 10_000))
def test_gradient_matches_central_differences(k, dim, seed):
    basis = make_basis(k, dim)
    rng = np.random.default_rng(seed)
    x = rng.dirichlet(np.ones(dim + 1))[:dim]
    h = 1e-6
    g = basis.gradient(x)
    for d in range(dim):
        e = np.zeros(dim)
        e[d] = h
        fd = (basis.evaluate(x + e) - basis.evaluate(x - e)) / (2 * h)
        assert np.allclose(g[:, d], fd, atol=1e-7 * max(1.0, np.abs(fd).max()))


def test_affine_map_roundtrip_and_identity_gradients():
    rng = np.random.default_rng(3)
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]) + 0.1 * rng.random((4, 3))
    amap = AffineMap.from_vertices(verts)
    assert amap.det > 0
    xi = rng.random((5, 3)) / 3
    assert np.allclose(amap.inverse(amap(xi)), xi, atol=1e-13)
    assert np.allclose(amap(np.eye(3)), verts[1:], atol=1e-15)

    ident = AffineMap.from_vertices(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]))
    basis = make_basis(2, 3)
    _, grads = physical_gradients(basis, ident, xi)
    assert np.allclose(grads, basis.gradient(xi))


def test_physical_gradient_chain_rule():
    # cell stretched in time: d/dt of a function of xi_0 picks up 1/dt
    verts = np.array([[0, 0, 0], [0.05, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    amap = AffineMap.from_vertices(verts)
    basis = make_basis(1, 3)
    xi = np.array([[0.2, 0.3, 0.1]])
    vals, grads = physical_gradients(basis, amap, xi)
    ref = basis.gradient(xi)
    assert np.allclose(grads[..., 0], ref[..., 0] / 0.05)
    assert np.allclose(grads[..., 1:], ref[..., 1:])


def test_degenerate_map():
    amap = AffineMap.from_vertices(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 0, 1.0]]))
    with pytest.raises(DegenerateMap):
        amap.inverse_transpose
    with pytest.raises(DegenerateMap):
        physical_gradients(make_basis(1, 3), amap, np.zeros((1, 3)))
