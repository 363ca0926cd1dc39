"""Spatial triangulations, domain motion and space-time slab meshes.

A slab between t^n and t^{n+1} is obtained by extruding a spatial
triangulation along straight vertex trajectories and splitting each
space-time prism into three tetrahedra. Space-time points are ordered
(t, x1, x2) throughout.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateCell,
    InconsistentTopology,
    InvalidMotion,
    MeshFormatError,
)

VOLUME_TOLERANCE = 1e-12


class BoundaryKind(IntEnum):
    DIRICHLET = 0
    NEUMANN = 1


class FacetKind(IntEnum):
    BOTTOM = 0
    TOP = 1
    INTERIOR = 2
    DIRICHLET = 3
    NEUMANN = 4


class CellKind(IntEnum):
    """Position of a tetrahedron inside its prism."""

    BOTTOM = 0  # owns the bottom facet K^n
    MIDDLE = 1  # only Q-facets
    TOP = 2  # owns the top facet K^{n+1}


_TAG_NAMES = {"D": BoundaryKind.DIRICHLET, "N": BoundaryKind.NEUMANN}


def triangle_areas(vertices, triangles):
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _edges_of(triangles):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    return np.sort(e, axis=1)


@dataclass(frozen=True)
class SpatialMesh:
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), counter-clockwise
    boundary_edges: np.ndarray  # (nb, 2), sorted vertex pairs
    boundary_tags: np.ndarray  # (nb,), BoundaryKind values

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_edges", "boundary_tags"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def areas(self):
        return triangle_areas(self.vertices, self.triangles)

    def validate(self):
        """Raise if any SpatialMesh invariant is violated."""
        tri = self.triangles
        if tri.size and (tri.min() < 0 or tri.max() >= self.n_vertices):
            raise InconsistentTopology("triangle references a vertex out of range")
        if len(np.unique(tri)) != self.n_vertices:
            raise InconsistentTopology("vertex indices are not a contiguous range of used vertices")
        if np.any(self.areas() <= 0.0):
            raise InvalidMotion("triangle with non-positive signed area")
        edges, counts = np.unique(_edges_of(tri), axis=0, return_counts=True)
        if np.any(counts > 2):
            raise InconsistentTopology("edge shared by more than two triangles")
        bnd = edges[counts == 1]
        tagged = {tuple(e) for e in np.sort(self.boundary_edges, axis=1)}
        if tagged != {tuple(e) for e in bnd}:
            raise InconsistentTopology("boundary edges and tagged edges differ")
        return self

    def with_vertices(self, vertices):
        return SpatialMesh(np.asarray(vertices, dtype=float), self.triangles,
                           self.boundary_edges, self.boundary_tags)


def triangulate_unit_square(nx):
    """Uniform mesh of [0,1]^2 with 2*nx**2 triangles.

    Each square is cut along its (lower-left, upper-right) diagonal. The right
    boundary x1 = 1 is tagged Neumann, all other boundary edges Dirichlet.
    """
    if nx < 1:
        raise ValueError("nx must be >= 1")
    g = np.linspace(0.0, 1.0, nx + 1)
    X1, X2 = np.meshgrid(g, g, indexing="xy")
    vertices = np.column_stack([X1.ravel(), X2.ravel()])
    idx = np.arange((nx + 1) ** 2).reshape(nx + 1, nx + 1)  # idx[j, i] -> (x1_i, x2_j)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    tris = np.empty((2 * nx * nx, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])

    edges, counts = np.unique(_edges_of(tris), axis=0, return_counts=True)
    bnd = edges[counts == 1]
    on_right = np.all(np.isclose(vertices[bnd, 0], 1.0), axis=1)
    tags = np.where(on_right, BoundaryKind.NEUMANN, BoundaryKind.DIRICHLET).astype(np.int64)
    return SpatialMesh(vertices, tris, bnd, tags)


class DomainMotion:
    """Maps reference vertex coordinates x0 to positions at time t."""

    def position(self, x0, t):
        raise NotImplementedError

    def velocity(self, x0, t):
        raise NotImplementedError


class StaticMotion(DomainMotion):
    def position(self, x0, t):
        return np.array(x0, dtype=float)

    def velocity(self, x0, t):
        return np.zeros_like(np.asarray(x0, dtype=float))


@dataclass(frozen=True)
class SinusoidalMotion(DomainMotion):
    """x_i = x_i^0 + A (1 - x_i^0) sin(2 pi (1/2 - x_i^* + t)), x^* = (x2^0, x1^0)."""

    amplitude: float = 0.05

    def position(self, x0, t):
        x0 = np.asarray(x0, dtype=float)
        star = x0[..., ::-1]
        return x0 + self.amplitude * (1.0 - x0) * np.sin(2.0 * np.pi * (0.5 - star + t))

    def velocity(self, x0, t):
        x0 = np.asarray(x0, dtype=float)
        star = x0[..., ::-1]
        return self.amplitude * (1.0 - x0) * 2.0 * np.pi * np.cos(2.0 * np.pi * (0.5 - star + t))


def move_mesh(mesh, motion, t):
    """Spatial mesh at time t; ``mesh`` holds the reference vertex positions."""
    moved = mesh.with_vertices(motion.position(mesh.vertices, t))
    bad = np.flatnonzero(moved.areas() <= 0.0)
    if bad.size:
        raise InvalidMotion(f"{bad.size} triangles inverted at t={t} (first: {bad[0]})")
    return moved


@dataclass(frozen=True)
class SlabMesh:
    t0: float
    t1: float
    n_spatial_vertices: int
    vertices: np.ndarray  # (2 nv, 3): bottom layer then top layer
    cells: np.ndarray  # (nc, 4) positively oriented
    cell_kind: np.ndarray  # (nc,) CellKind
    cell_prism: np.ndarray  # (nc,) spatial triangle index
    facets: np.ndarray  # (nf, 3) sorted vertex ids
    facet_cells: np.ndarray  # (nf, 2), -1 where absent
    facet_local: np.ndarray  # (nf, 2) local face index in each adjacent cell
    cell_facets: np.ndarray  # (nc, 4) facet opposite local vertex i
    facet_kind: np.ndarray = field(default=None)  # (nf,) FacetKind
    cell_normals: np.ndarray = field(default=None)  # (nc, 4, 3) outward unit (n_t, n1, n2)
    cell_volume: np.ndarray = field(default=None)
    cell_diameter: np.ndarray = field(default=None)
    facet_area: np.ndarray = field(default=None)
    facet_grid_velocity: np.ndarray = field(default=None)  # (nf, 2)
    vertex_velocity: np.ndarray = field(default=None)  # (nv, 2)
    bottom: SpatialMesh = field(default=None, repr=False)
    top: SpatialMesh = field(default=None, repr=False)

    @property
    def dt(self):
        return self.t1 - self.t0

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_facets(self):
        return len(self.facets)

    def q_facets(self):
        """Indices of facets with |n_t| != 1 (interior and boundary Q-facets)."""
        return np.flatnonzero(self.facet_kind >= FacetKind.INTERIOR)

    def facet_normal(self, facet, side=0):
        c = self.facet_cells[facet, side]
        return self.cell_normals[c, self.facet_local[facet, side]]


def _tet_signed_volume(p):
    a = p[..., 1, :] - p[..., 0, :]
    b = p[..., 2, :] - p[..., 0, :]
    c = p[..., 3, :] - p[..., 0, :]
    return np.einsum("...i,...i->...", a, np.cross(b, c)) / 6.0


def ruled_prism_volumes(bottom, top, dt):
    """Volume of each prism swept by straight vertex trajectories (Simpson, exact)."""
    mid = 0.5 * (bottom.vertices + top.vertices)
    a0 = triangle_areas(bottom.vertices, bottom.triangles)
    am = triangle_areas(mid, bottom.triangles)
    a1 = triangle_areas(top.vertices, top.triangles)
    return dt * (a0 + 4.0 * am + a1) / 6.0


def extrude_slab(bottom, top, t_n, t_np1):
    """Extrude ``bottom`` to ``top`` and split every prism into three tetrahedra.

    Each quadrilateral side face is cut along the diagonal leaving its smallest
    global vertex index. With the sorted prism base a < b < c and primes for
    top-layer copies, the tetrahedra are {a,b,c,c'}, {a,b,c',b'}, {a,a',b',c'}.
    """
    if not t_np1 > t_n:
        raise ValueError("t_np1 must exceed t_n")
    if bottom.triangles.shape != top.triangles.shape or np.any(bottom.triangles != top.triangles):
        raise InconsistentTopology("bottom and top meshes must share connectivity")
    nv = bottom.n_vertices
    dt = t_np1 - t_n
    verts = np.vstack([
        np.column_stack([np.full(nv, t_n), bottom.vertices]),
        np.column_stack([np.full(nv, t_np1), top.vertices]),
    ])
    tri = np.sort(bottom.triangles, axis=1)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    nt = len(tri)
    cells = np.empty((3 * nt, 4), dtype=np.int64)
    cells[0::3] = np.column_stack([a, b, c, c + nv])
    cells[1::3] = np.column_stack([a, b, c + nv, b + nv])
    cells[2::3] = np.column_stack([a, a + nv, b + nv, c + nv])
    # sorted base order may be clockwise: flip the last two vertices then
    cw = triangle_areas(bottom.vertices, tri) < 0.0
    flip = np.repeat(cw, 3)
    cells[flip, 2], cells[flip, 3] = cells[flip, 3].copy(), cells[flip, 2].copy()
    kind = np.tile(np.array([CellKind.BOTTOM, CellKind.MIDDLE, CellKind.TOP]), nt)
    prism = np.repeat(np.arange(nt), 3)

    vol = _tet_signed_volume(verts[cells])
    pv = np.repeat(ruled_prism_volumes(bottom, top, dt), 3)
    bad = np.flatnonzero(vol <= VOLUME_TOLERANCE * np.abs(pv))
    if bad.size:
        raise DegenerateCell(
            f"{bad.size} degenerate tetrahedra (first cell {bad[0]}, volume {vol[bad[0]]:.3e})"
        )

    # faces: local face i is opposite local vertex i
    opp = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
    faces = np.sort(cells[:, opp], axis=2).reshape(-1, 3)
    facets, inverse, counts = np.unique(faces, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    bad = np.flatnonzero((counts != 1) & (counts != 2))
    if bad.size:
        raise InconsistentTopology(f"facet {facets[bad[0]]} has {counts[bad[0]]} adjacent cells")
    cell_facets = inverse.reshape(-1, 4)
    nf = len(facets)
    facet_cells = np.full((nf, 2), -1, dtype=np.int64)
    facet_local = np.full((nf, 2), -1, dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    sorted_f = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_f[1:] != sorted_f[:-1]
    side = np.where(first, 0, 1)
    facet_cells[sorted_f, side] = order // 4
    facet_local[sorted_f, side] = order % 4

    slab = SlabMesh(
        t0=float(t_n), t1=float(t_np1), n_spatial_vertices=nv, vertices=verts,
        cells=cells, cell_kind=kind, cell_prism=prism, facets=facets,
        facet_cells=facet_cells, facet_local=facet_local, cell_facets=cell_facets,
        cell_volume=vol, bottom=bottom, top=top,
    )
    slab = classify_facets(slab, bottom.boundary_edges, bottom.boundary_tags)
    return _with_geometry(slab)


def classify_facets(slab, boundary_edges, boundary_tags):
    """Assign FacetKind combinatorially from vertex time levels and edge tags."""
    nv = slab.n_spatial_vertices
    f = slab.facets
    layer = f >= nv
    kind = np.full(len(f), FacetKind.INTERIOR, dtype=np.int64)
    kind[~layer.any(axis=1)] = FacetKind.BOTTOM
    kind[layer.all(axis=1)] = FacetKind.TOP
    n_adj = (slab.facet_cells >= 0).sum(axis=1)
    if np.any((n_adj != 1) & (n_adj != 2)):
        raise InconsistentTopology("facet with invalid number of adjacent cells")
    q = kind == FacetKind.INTERIOR
    bq = np.flatnonzero(q & (n_adj == 1))
    tag_of = {tuple(e): int(t) for e, t in zip(np.sort(boundary_edges, axis=1), boundary_tags)}
    for fi in bq:
        spatial = np.unique(f[fi] % nv)
        if len(spatial) != 2:
            raise InconsistentTopology(f"boundary Q-facet {fi} does not extrude a spatial edge")
        tag = tag_of.get(tuple(spatial))
        if tag is None:
            raise InconsistentTopology(f"boundary Q-facet {fi} lies on an untagged edge")
        kind[fi] = FacetKind.NEUMANN if tag == BoundaryKind.NEUMANN else FacetKind.DIRICHLET
    inner_temporal = (kind <= FacetKind.TOP) & (n_adj != 1)
    if np.any(inner_temporal):
        raise InconsistentTopology("bottom/top facet shared by two cells")
    return _replace(slab, facet_kind=kind)


def _replace(slab, **changes):
    from dataclasses import replace

    return replace(slab, **changes)


def _with_geometry(slab):
    P = slab.vertices[slab.cells]  # (nc, 4, 3)
    opp = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
    F = P[:, opp]  # (nc, 4, 3, 3)
    N = np.cross(F[:, :, 1] - F[:, :, 0], F[:, :, 2] - F[:, :, 0])
    norm = np.linalg.norm(N, axis=-1)
    N /= norm[..., None]
    to_opp = P - F[:, :, 0]  # vector from face to opposite vertex
    sgn = np.sign(np.einsum("cfi,cfi->cf", N, to_opp))
    N *= -sgn[..., None]
    # combinatorial kinds give exact temporal normals
    fk = slab.facet_kind[slab.cell_facets]
    N[fk == FacetKind.BOTTOM] = (-1.0, 0.0, 0.0)
    N[fk == FacetKind.TOP] = (1.0, 0.0, 0.0)

    fa = slab.facets
    Pf = slab.vertices[fa]
    area = 0.5 * np.linalg.norm(np.cross(Pf[:, 1] - Pf[:, 0], Pf[:, 2] - Pf[:, 0]), axis=-1)

    d = P[:, :, None, :] - P[:, None, :, :]
    diam = np.sqrt((d ** 2).sum(-1)).max(axis=(1, 2))

    nv = slab.n_spatial_vertices
    vvel = (slab.top.vertices - slab.bottom.vertices) / slab.dt
    vg = np.zeros((len(fa), 2))
    q = np.flatnonzero(slab.facet_kind >= FacetKind.INTERIOR)
    n0 = N[slab.facet_cells[q, 0], slab.facet_local[q, 0]]
    for j, fi in enumerate(q):
        ids = fa[fi]
        low = ids[ids < nv]
        vertical = [v for v in low if v + nv in ids]
        if vertical:
            vg[fi] = vvel[vertical[0]]
        else:
            n = n0[j, 1:]
            vg[fi] = -n0[j, 0] * n / (n @ n)
    return _replace(slab, cell_normals=N, facet_area=area, cell_diameter=diam,
                    facet_grid_velocity=vg, vertex_velocity=vvel)


def facet_geometry(slab, facet, side=0):
    """Outward unit normal (n_t, n) seen from one adjacent cell, area and grid velocity.

    The grid velocity is the velocity of the facet's vertical edge when it has
    one; otherwise it is the normal velocity -n_t n / |n|^2 of the facet plane.
    Either choice satisfies n_t = -v_g . n.
    """
    n = slab.facet_normal(facet, side)
    return n, float(slab.facet_area[facet]), slab.facet_grid_velocity[facet].copy()


def read_triangulation(path):
    """Read an ASCII spatial mesh.

    Format (whitespace separated, '#' comments allowed)::

        nv
        x y            (nv lines)
        nt
        i j k          (nt lines, zero-based)
        nb
        i j tag        (nb lines, tag D or N)
    """
    path = Path(path)
    try:
        lines = [ln.split("#", 1)[0].split() for ln in path.read_text().splitlines()]
    except OSError as exc:
        raise MeshFormatError(f"{path}: {exc}") from exc
    tokens = [t for t in lines if t]
    pos = 0

    def take(n, width, label):
        nonlocal pos
        rows = tokens[pos:pos + n]
        if len(rows) != n or any(len(r) != width for r in rows):
            raise MeshFormatError(f"{path}: malformed {label} block")
        pos += n
        return rows

    def count(label):
        nonlocal pos
        if pos >= len(tokens) or len(tokens[pos]) != 1:
            raise MeshFormatError(f"{path}: expected {label} count")
        pos += 1
        return int(tokens[pos - 1][0])

    try:
        nv = count("vertex")
        vertices = np.array(take(nv, 2, "vertex"), dtype=float)
        nt = count("triangle")
        tris = np.array(take(nt, 3, "triangle"), dtype=np.int64)
        nb = count("boundary edge")
        rows = take(nb, 3, "boundary edge")
    except ValueError as exc:
        raise MeshFormatError(f"{path}: {exc}") from exc
    edges = np.sort(np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64).reshape(-1, 2), axis=1)
    try:
        tags = np.array([_TAG_NAMES[r[2].upper()] for r in rows], dtype=np.int64)
    except KeyError as exc:
        raise MeshFormatError(f"{path}: unknown boundary tag {exc}") from exc
    # accept clockwise input
    cw = triangle_areas(vertices, tris) < 0
    tris[cw] = tris[cw][:, [0, 2, 1]]
    return SpatialMesh(vertices, tris, edges, tags).validate()


def write_triangulation(mesh, path):
    names = {BoundaryKind.DIRICHLET: "D", BoundaryKind.NEUMANN: "N"}
    out = [str(mesh.n_vertices)]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    out.append(str(mesh.n_triangles))
    out += [" ".join(map(str, t)) for t in mesh.triangles]
    out.append(str(len(mesh.boundary_edges)))
    out += [f"{i} {j} {names[BoundaryKind(t)]}" for (i, j), t in zip(mesh.boundary_edges, mesh.boundary_tags)]
    Path(path).write_text("\n".join(out) + "\n")


def write_slab_vtk(slab, path):
    """Legacy ASCII VTK of the slab tetrahedra with cell kind as cell data."""
    lines = ["# vtk DataFile Version 3.0", f"space-time slab [{slab.t0}, {slab.t1}]",
             "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(slab.vertices)} double"]
    # (x1, x2, t) so the viewer's z axis is time
    lines += [f"{x:.17g} {y:.17g} {t:.17g}" for t, x, y in slab.vertices]
    nc = slab.n_cells
    lines.append(f"CELLS {nc} {5 * nc}")
    lines += ["4 " + " ".join(map(str, c)) for c in slab.cells]
    lines.append(f"CELL_TYPES {nc}")
    lines += ["10"] * nc
    lines += [f"CELL_DATA {nc}", "SCALARS cell_kind int 1", "LOOKUP_TABLE default"]
    lines += [str(int(k)) for k in slab.cell_kind]
    Path(path).write_text("\n".join(lines) + "\n")
