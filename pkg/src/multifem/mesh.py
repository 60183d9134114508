"""Simplicial meshes embedded in 1d/2d/3d: structured generators, derived
facet/cell submeshes with parent maps, and grid-accelerated point location.

Meshes are immutable after construction and safe to share across threads.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Mesh", "CellLocator", "ParentLink", "MeshError", "OutOfDomainError",
    "EmptySelectionError", "unit_square_mesh", "unit_cube_mesh",
    "polyline_mesh", "facet_submesh", "cell_submesh", "near",
    "write_mesh_ascii", "read_mesh_ascii",
]

_MIN_MEASURE = 1e-14

_uid_counter = itertools.count()


class MeshError(ValueError):
    pass


class OutOfDomainError(MeshError):
    """Raised when a query point lies outside every cell of a mesh."""

    def __init__(self, point, mesh=None, detail=None):
        self.point = np.asarray(point, dtype=float)
        msg = f"point {self.point.tolist()} is outside the mesh"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class EmptySelectionError(MeshError):
    pass


def near(a, b=0.0, tol=1e-10):
    """Proximity check for coordinate predicates (absolute tolerance)."""
    return abs(a - b) < tol


# Local sub-entity numbering. Edge/facet k is opposite local vertex k where
# that convention exists (triangle edges, tet faces).
_TRI_EDGES = ((1, 2), (0, 2), (0, 1))
_TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
_TET_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))


@dataclass(frozen=True)
class ParentLink:
    """Connection of a derived mesh to the mesh it was extracted from."""
    mesh: "Mesh"
    vertex_map: np.ndarray        # submesh vertex -> parent vertex
    cell_to_parent_cell: np.ndarray
    cell_to_parent_entity: np.ndarray  # facet index (facet submesh) or cell index


class Mesh:
    """Simplicial mesh of topological dimension ``tdim`` embedded in
    ``gdim``-space (tdim <= gdim <= 3).

    ``vertices`` is (nv, gdim) float64, ``cells`` is (nc, tdim+1) int64.
    Derived entities (edges, facets) are numbered deterministically by
    first appearance in cell order, so regenerating a mesh from equal
    inputs reproduces identical arrays.
    """

    def __init__(self, vertices, cells, parent: ParentLink | None = None):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        if self.vertices.ndim != 2 or self.cells.ndim != 2:
            raise MeshError("vertices must be (nv, gdim), cells (nc, tdim+1)")
        self.gdim = self.vertices.shape[1]
        self.tdim = self.cells.shape[1] - 1
        if not 1 <= self.tdim <= self.gdim <= 3:
            raise MeshError(f"unsupported dimensions tdim={self.tdim}, gdim={self.gdim}")
        self.parent = parent
        self.uid = next(_uid_counter)
        self._edges = None
        self._cell_edges = None
        self._facets = None
        self._facet_cells = None
        self._cell_facets = None
        self._locator = None
        vols = self.cell_volumes
        if np.any(vols < _MIN_MEASURE):
            bad = int(np.argmin(vols))
            raise MeshError(f"cell {bad} has measure {vols[bad]:.3e} < {_MIN_MEASURE}")

    # -- basic quantities ---------------------------------------------------

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    @property
    def cell_volumes(self):
        """Unsigned cell measures (length/area/volume)."""
        try:
            return self._volumes
        except AttributeError:
            pass
        v = self.vertices[self.cells]              # (nc, tdim+1, gdim)
        e = v[:, 1:, :] - v[:, :1, :]              # (nc, tdim, gdim)
        if self.tdim == self.gdim:
            det = np.abs(np.linalg.det(e))
        else:
            gram = np.einsum("ctg,csg->cts", e, e)
            det = np.sqrt(np.abs(np.linalg.det(gram)))
        self._volumes = det / math.factorial(self.tdim)
        return self._volumes

    @property
    def cell_centroids(self):
        return self.vertices[self.cells].mean(axis=1)

    # -- derived entities ---------------------------------------------------

    def _build_edges(self):
        if self.tdim == 1:
            self._edges = self.cells.copy()
            self._cell_edges = np.arange(self.num_cells, dtype=np.int64)[:, None]
            return
        local = _TRI_EDGES if self.tdim == 2 else _TET_EDGES
        index = {}
        edges = []
        cell_edges = np.empty((self.num_cells, len(local)), dtype=np.int64)
        for c, cell in enumerate(self.cells):
            for k, (a, b) in enumerate(local):
                key = (cell[a], cell[b]) if cell[a] < cell[b] else (cell[b], cell[a])
                idx = index.get(key)
                if idx is None:
                    idx = len(edges)
                    index[key] = idx
                    edges.append(key)
                cell_edges[c, k] = idx
        self._edges = np.asarray(edges, dtype=np.int64)
        self._cell_edges = cell_edges

    @property
    def edges(self):
        """(ne, 2) vertex pairs, each sorted ascending; for tdim=1 the cells."""
        if self._edges is None:
            self._build_edges()
        return self._edges

    @property
    def cell_edges(self):
        """(nc, edges per cell) map into the global edge numbering."""
        if self._cell_edges is None:
            self._build_edges()
        return self._cell_edges

    def _build_facets(self):
        if self.tdim == 2:
            facets = self.edges
            cell_facets = self.cell_edges
        elif self.tdim == 3:
            index = {}
            facets = []
            cell_facets = np.empty((self.num_cells, 4), dtype=np.int64)
            for c, cell in enumerate(self.cells):
                for k, loc in enumerate(_TET_FACES):
                    key = tuple(sorted(cell[list(loc)]))
                    idx = index.get(key)
                    if idx is None:
                        idx = len(facets)
                        index[key] = idx
                        facets.append(key)
                    cell_facets[c, k] = idx
            facets = np.asarray(facets, dtype=np.int64)
        else:
            raise MeshError("facets are not defined for tdim=1 meshes")
        adjacency = [[] for _ in range(len(facets))]
        for c in range(self.num_cells):
            for f in cell_facets[c]:
                adjacency[f].append(c)
        self._facets = facets
        self._cell_facets = cell_facets
        self._facet_cells = adjacency

    @property
    def facets(self):
        """(nf, tdim) codimension-1 entities as sorted vertex tuples."""
        if self._facets is None:
            self._build_facets()
        return self._facets

    @property
    def facet_cells(self):
        """List of adjacent cell indices per facet (1 on the boundary, else 2)."""
        if self._facet_cells is None:
            self._build_facets()
        return self._facet_cells

    @property
    def locator(self):
        if self._locator is None:
            self._locator = CellLocator(self)
        return self._locator

    def locate(self, x):
        """Shorthand for ``mesh.locator.locate(x)``."""
        return self.locator.locate(x)


class CellLocator:
    """Uniform background grid over cell bounding boxes.

    ``locate`` returns (cell index, barycentric coordinates).  Points shared
    by several cells resolve to the lowest cell index; containment uses an
    absolute tolerance on barycentric coordinates (default 1e-10).
    """

    def __init__(self, mesh: Mesh, tol: float = 1e-10):
        self.mesh = mesh
        self.tol = tol
        v = mesh.vertices[mesh.cells]                      # (nc, tdim+1, gdim)
        self._cell_lo = v.min(axis=1)
        self._cell_hi = v.max(axis=1)
        self.lo = self._cell_lo.min(axis=0)
        self.hi = self._cell_hi.max(axis=0)
        nbins = max(1, math.ceil(mesh.num_cells ** (1.0 / mesh.tdim)))
        self.nbins = nbins
        span = self.hi - self.lo
        # Degenerate axes (e.g. a vertical line in 3d) collapse to one bin.
        self.width = np.where(span > 0, span / nbins, 1.0)
        self._bins = {}
        pad = 1e-12 + 1e-12 * np.linalg.norm(span)
        lo_idx = np.clip(np.floor((self._cell_lo - pad - self.lo) / self.width),
                         0, nbins - 1).astype(np.int64)
        hi_idx = np.clip(np.floor((self._cell_hi + pad - self.lo) / self.width),
                         0, nbins - 1).astype(np.int64)
        for c in range(mesh.num_cells):
            for key in itertools.product(*(range(a, b + 1)
                                           for a, b in zip(lo_idx[c], hi_idx[c]))):
                self._bins.setdefault(key, []).append(c)
        # geometry for barycentric solves
        self._v0 = v[:, 0, :]
        self._E = v[:, 1:, :] - v[:, :1, :]                # (nc, tdim, gdim)
        if mesh.tdim == mesh.gdim:
            self._Einv = np.linalg.inv(self._E)
        else:
            gram = np.einsum("ctg,csg->cts", self._E, self._E)
            self._Einv = np.einsum("cts,csg->ctg", np.linalg.inv(gram), self._E)
        self._diam = np.linalg.norm(self._cell_hi - self._cell_lo, axis=1)

    def _bin_index(self, x):
        idx = np.floor((np.asarray(x) - self.lo) / self.width).astype(int)
        return np.clip(idx, 0, self.nbins - 1)

    def barycentric(self, cell, x):
        """Barycentric coordinates of x in ``cell`` plus off-manifold distance."""
        d = np.asarray(x, dtype=float) - self._v0[cell]
        if self.mesh.tdim == self.mesh.gdim:
            mu = self._Einv[cell].T @ d
            resid = 0.0
        else:
            mu = self._Einv[cell] @ d
            resid = float(np.linalg.norm(d - mu @ self._E[cell]))
        lam = np.empty(self.mesh.tdim + 1)
        lam[0] = 1.0 - mu.sum()
        lam[1:] = mu
        return lam, resid

    def locate(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.mesh.gdim,):
            raise MeshError(f"expected point of dimension {self.mesh.gdim}, got shape {x.shape}")
        candidates = self._bins.get(tuple(self._bin_index(x)), ())
        best = None
        for c in candidates:
            lam, resid = self.barycentric(c, x)
            if lam.min() >= -self.tol and resid <= self.tol * (1.0 + self._diam[c]):
                if best is None or c < best[0]:
                    best = (c, lam)
        if best is None:
            raise OutOfDomainError(x, self.mesh)
        return best


# -- generators --------------------------------------------------------------

def unit_square_mesh(n, m=None, offset=(0.0, 0.0), extent=(1.0, 1.0)):
    """Triangulated rectangle: n x m rectangles, each split by the diagonal
    from its lower-left vertex.  Vertex (i, j) has index j*(n+1)+i.
    """
    if m is None:
        m = n
    n, m = int(n), int(m)
    if n < 1 or m < 1:
        raise MeshError(f"cell counts must be >= 1, got ({n}, {m})")
    ex, ey = float(extent[0]), float(extent[1])
    if ex <= 0 or ey <= 0:
        raise MeshError(f"extents must be positive, got {extent}")
    xs = offset[0] + ex * np.arange(n + 1) / n
    ys = offset[1] + ey * np.arange(m + 1) / m
    X, Y = np.meshgrid(xs, ys)                     # row j = y level j
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = []
    for j in range(m):
        for i in range(n):
            ll, lr = vid(i, j), vid(i + 1, j)
            ul, ur = vid(i, j + 1), vid(i + 1, j + 1)
            cells.append((ll, lr, ur))
            cells.append((ll, ur, ul))
    return Mesh(vertices, np.asarray(cells, dtype=np.int64))


def unit_cube_mesh(n):
    """[0,1]^3 as n^3 sub-cubes, each split into 6 tetrahedra sharing the
    main diagonal (Kuhn split): one tet per axis permutation."""
    n = int(n)
    if n < 1:
        raise MeshError(f"cell count must be >= 1, got {n}")
    axis = np.arange(n + 1) / n
    vertices = np.array([(x, y, z) for z in axis for y in axis for x in axis])

    def vid(i, j, k):
        return (k * (n + 1) + j) * (n + 1) + i

    perms = list(itertools.permutations(range(3)))
    cells = []
    for k in range(n):
        for j in range(n):
            for i in range(n):
                base = np.array([i, j, k])
                for perm in perms:
                    path = [base.copy()]
                    p = base.copy()
                    for ax in perm:
                        p = p.copy()
                        p[ax] += 1
                        path.append(p)
                    cells.append(tuple(vid(*q) for q in path))
    return Mesh(vertices, np.asarray(cells, dtype=np.int64))


def polyline_mesh(points, cells_per_segment):
    """Interval mesh along an ordered polyline, each segment subdivided into
    ``cells_per_segment`` equal cells."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) < 2:
        raise MeshError("polyline needs at least 2 points")
    k = int(cells_per_segment)
    if k < 1:
        raise MeshError(f"cells_per_segment must be >= 1, got {k}")
    verts = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        if np.linalg.norm(b - a) < _MIN_MEASURE:
            raise MeshError(f"repeated consecutive polyline points at {a.tolist()}")
        for s in range(1, k + 1):
            verts.append(a + (b - a) * s / k)
    vertices = np.asarray(verts)
    nc = len(vertices) - 1
    cells = np.column_stack([np.arange(nc), np.arange(1, nc + 1)]).astype(np.int64)
    return Mesh(vertices, cells)


# -- derived meshes ----------------------------------------------------------

def facet_submesh(parent: Mesh, predicate):
    """Mesh of the parent facets whose vertices and midpoint all satisfy
    ``predicate``.  Each submesh cell records its parent facet and the
    adjacent parent cell (the unique one on the boundary, else the lowest
    cell index)."""
    facets = parent.facets
    fverts = parent.vertices[facets]                 # (nf, tdim, gdim)
    selected = []
    for f in range(len(facets)):
        pts = fverts[f]
        if all(predicate(p) for p in pts) and predicate(pts.mean(axis=0)):
            selected.append(f)
    if not selected:
        raise EmptySelectionError("predicate selects no facets")
    vmap = {}
    new_vertices = []
    cells = []
    p_cells = []
    for f in selected:
        local = []
        for v in facets[f]:
            if v not in vmap:
                vmap[v] = len(new_vertices)
                new_vertices.append(parent.vertices[v])
            local.append(vmap[v])
        cells.append(local)
        p_cells.append(min(parent.facet_cells[f]))
    link = ParentLink(
        mesh=parent,
        vertex_map=np.asarray(sorted(vmap, key=vmap.get), dtype=np.int64),
        cell_to_parent_cell=np.asarray(p_cells, dtype=np.int64),
        cell_to_parent_entity=np.asarray(selected, dtype=np.int64),
    )
    return Mesh(np.asarray(new_vertices), np.asarray(cells, dtype=np.int64), parent=link)


def cell_submesh(parent: Mesh, predicate):
    """Same-dimension submesh of the parent cells whose centroid satisfies
    ``predicate`` (used for restriction to a subdomain)."""
    keep = [c for c in range(parent.num_cells) if predicate(parent.cell_centroids[c])]
    if not keep:
        raise EmptySelectionError("predicate selects no cells")
    vmap = {}
    new_vertices = []
    cells = []
    for c in keep:
        local = []
        for v in parent.cells[c]:
            if v not in vmap:
                vmap[v] = len(new_vertices)
                new_vertices.append(parent.vertices[v])
            local.append(vmap[v])
        cells.append(local)
    link = ParentLink(
        mesh=parent,
        vertex_map=np.asarray(sorted(vmap, key=vmap.get), dtype=np.int64),
        cell_to_parent_cell=np.asarray(keep, dtype=np.int64),
        cell_to_parent_entity=np.asarray(keep, dtype=np.int64),
    )
    return Mesh(np.asarray(new_vertices), np.asarray(cells, dtype=np.int64), parent=link)


# -- debugging dump ----------------------------------------------------------

def write_mesh_ascii(mesh: Mesh, path):
    """ASCII dump: 'tdim gdim nv nc', nv coordinate lines (17 significant
    digits), nc cell lines.  Debug/golden-file format only."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.tdim} {mesh.gdim} {mesh.num_vertices} {mesh.num_cells}\n")
        for v in mesh.vertices:
            fh.write(" ".join(f"{x:.17g}" for x in v) + "\n")
        for c in mesh.cells:
            fh.write(" ".join(str(int(i)) for i in c) + "\n")


def read_mesh_ascii(path):
    with open(path) as fh:
        tdim, gdim, nv, nc = (int(t) for t in fh.readline().split())
        vertices = np.array([[float(t) for t in fh.readline().split()] for _ in range(nv)])
        cells = np.array([[int(t) for t in fh.readline().split()] for _ in range(nc)])
    if vertices.shape != (nv, gdim) or cells.shape != (nc, tdim + 1):
        raise MeshError(f"malformed mesh file {path}")
    return Mesh(vertices, cells)
