import numpy as np
import pytest

from sthdg.dofs import BoundaryData, build_layout, facet_points, interpolate_dirichlet
from sthdg.mesh import FacetKind, SinusoidalMotion, extrude_slab, move_mesh, triangulate_unit_square


@pytest.fixture(scope="module")
def slab():
    ref = triangulate_unit_square(2)
    m = SinusoidalMotion()
    return extrude_slab(move_mesh(ref, m, 0.0), move_mesh(ref, m, 0.1), 0.0, 0.1)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_layout_sizes(slab, k):
    lay = build_layout(slab, k)
    nq = len(slab.q_facets())
    assert lay.n_W == slab.n_cells * lay.n_cell_local
    assert lay.n_Wbar == 3 * lay.n_f * nq
    cd = lay.cell_dofs(np.arange(slab.n_cells))
    fd = lay.facet_dofs(slab.q_facets())
    assert np.array_equal(np.sort(cd.ravel()), np.arange(lay.n_W))
    assert np.array_equal(np.sort(fd.ravel()), np.arange(lay.n_Wbar))


def test_layout_is_deterministic_and_readonly(slab):
    a, b = build_layout(slab, 2), build_layout(slab, 2)
    assert np.array_equal(a.q_facets, b.q_facets)
    assert np.array_equal(a.constrained, b.constrained)
    with pytest.raises(ValueError):
        a.constrained[0] = True


def test_constrained_mask_covers_dirichlet_velocity_only(slab):
    lay = build_layout(slab, 2)
    d = lay.q_facets[slab.facet_kind[lay.q_facets] == FacetKind.DIRICHLET]
    dofs = lay.facet_dofs(d)
    assert lay.constrained[dofs[:, : 2 * lay.n_f]].all()
    assert not lay.constrained[dofs[:, 2 * lay.n_f:]].any()
    assert lay.constrained.sum() == 2 * lay.n_f * len(d)


def test_temporal_facets_have_no_dofs(slab):
    lay = build_layout(slab, 1)
    bottom = np.flatnonzero(slab.facet_kind == FacetKind.BOTTOM)
    with pytest.raises(ValueError):
        lay.facet_dofs(bottom)


def test_split_views(slab):
    lay = build_layout(slab, 1)
    W = np.arange(lay.n_W, dtype=float)
    U, P = lay.split_cell(W)
    assert U.shape == (slab.n_cells, 2, lay.n_u) and P.shape == (slab.n_cells, lay.n_p)
    idx = lay.cell_dofs([3])[0]
    assert np.array_equal(np.concatenate([U[3].ravel(), P[3]]), W[idx])


def test_rejects_degree_zero(slab):
    with pytest.raises(ValueError):
        build_layout(slab, 0)


def test_facet_points_are_vertices(slab):
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    X = facet_points(slab, [0, 5], ref)
    assert np.allclose(X, slab.vertices[slab.facets[[0, 5]]])


def test_dirichlet_interpolation_reproduces_polynomials(slab):
    k = 2
    lay = build_layout(slab, k)
    poly = lambda X: np.stack([X[..., 0] * X[..., 1] + X[..., 2], 1 - X[..., 1] ** 2], axis=-1)
    vals = interpolate_dirichlet(lay, BoundaryData(dirichlet=poly), slab)
    Ub, Pb = lay.split_facet(vals)
    assert np.all(Pb == 0)
    from sthdg.basis import make_basis

    ref = np.random.default_rng(0).dirichlet(np.ones(3), size=6)[:, :2]
    chi = make_basis(k, 2).evaluate(ref)
    for f in lay.q_facets:
        q = lay.q_index[f]
        recon = np.einsum("qm,cm->qc", chi, Ub[q])
        if slab.facet_kind[f] == FacetKind.DIRICHLET:
            assert np.allclose(recon, poly(facet_points(slab, [f], ref)[0]), atol=1e-12)
        else:
            assert np.allclose(recon, 0.0)


def test_dirichlet_interpolation_without_data(slab):
    lay = build_layout(slab, 1)
    assert not interpolate_dirichlet(lay, None, slab).any()
