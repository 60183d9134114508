"""Reduction matrices coupling bulk spaces to lower-dimensional (or
subdomain) target spaces: point-evaluation traces, circle averages around
a curve, and same-dimension restrictions.

Rows correspond to target dofs, columns to source dofs.  A synchronized
cache builds each matrix once per (source space, target mesh, kind,
parameters) key and exposes a build counter for testing.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .forms import ReductionKind
from .mesh import Mesh, OutOfDomainError
from .space import Element, FunctionSpace, basis_row, build_space

__all__ = [
    "ReductionMatrix", "ReductionCache", "default_cache", "UnsupportedReductionError",
    "deduce_reduced_space", "trace_matrix", "average_matrix", "restriction_matrix",
    "circle_frame", "circle_points", "curve_dof_tangents", "reduction_matrix",
]


class UnsupportedReductionError(ValueError):
    pass


@dataclass
class ReductionMatrix:
    kind: ReductionKind
    source: FunctionSpace
    target_space: FunctionSpace
    matrix: sp.csr_matrix


def deduce_reduced_space(source: FunctionSpace, target_mesh: Mesh, kind: ReductionKind):
    """Target space of a reduction: Lagrange sources keep their degree and
    value shape; RT0 reduces to cellwise-constant vectors; restriction
    preserves the element exactly."""
    el = source.element
    if kind.name == "restrict":
        return build_space(target_mesh, el)
    if el.family == "Lagrange" and el.degree >= 1:
        return build_space(target_mesh, el)
    if el.family == "RaviartThomas" and kind.name == "trace":
        return build_space(target_mesh, Element("DiscontinuousLagrange", 0, vector=True))
    raise UnsupportedReductionError(
        f"no reduced space for {el.family} degree {el.degree} under {kind.name}")


def _parent_cell_hints(target_mesh: Mesh, source: FunctionSpace):
    """Per-target-cell source cell to evaluate in, when the target mesh was
    derived from the source mesh; otherwise None (locator tie-break)."""
    link = target_mesh.parent
    if link is not None and link.mesh is source.mesh:
        return link.cell_to_parent_cell
    return None


def _point_evaluation_matrix(source: FunctionSpace, target: FunctionSpace,
                             points_of=None):
    """Rows = target dofs; row i holds source basis values at the functional
    location of dof i (optionally transformed by ``points_of``).  Each dof is
    evaluated from the first target cell listing it (deterministic side)."""
    hints = _parent_cell_hints(target.mesh, source)
    ncomp_t = target.ncomp
    rows, cols, vals = [], [], []
    filled = np.zeros(target.dim, dtype=bool)
    for tc in range(target.mesh.num_cells):
        hint = int(hints[tc]) if hints is not None else None
        for dof in target.dofmap[tc]:
            if filled[dof]:
                continue
            filled[dof] = True
            x = target.dof_coords[dof]
            comp = target.dof_component[dof] if ncomp_t > 1 else 0
            try:
                c, v = basis_row(source, x, cell=hint)
            except OutOfDomainError:
                raise OutOfDomainError(x, detail=f"target dof {dof}") from None
            row_vals = v[comp if source.ncomp > 1 else 0]
            rows.extend([dof] * len(c))
            cols.extend(c)
            vals.extend(row_vals)
    if not filled.all():
        raise UnsupportedReductionError("target space has dofs not reachable from cells")
    m = sp.coo_matrix((vals, (rows, cols)), shape=(target.dim, source.dim)).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def trace_matrix(source: FunctionSpace, target: FunctionSpace):
    """Point-evaluation trace onto a lower-dimensional target mesh.  Lagrange
    targets evaluate at dof coordinates; vector-P0 targets (RT0 source) at
    cell midpoints, from the designated parent side where available."""
    return _point_evaluation_matrix(source, target)


def restriction_matrix(source: FunctionSpace, target: FunctionSpace):
    """Same-dimension restriction; identical mechanism to the trace."""
    return _point_evaluation_matrix(source, target)


# -- circle averages -----------------------------------------------------------

_AXES = np.eye(3)


def circle_frame(tangent):
    """Right-handed orthonormal (e1, e2, tangent): e1 = normalize(t x a)
    with a the coordinate axis minimizing |t.a| (lowest index on ties)."""
    t = np.asarray(tangent, dtype=float)
    t = t / np.linalg.norm(t)
    dots = np.abs(_AXES @ t)
    a = _AXES[int(np.argmin(np.round(dots, 12)))]
    e1 = np.cross(t, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(t, e1)
    return e1, e2


def circle_points(center, tangent, radius, n_quad):
    """Uniform points on the circle of given radius in the plane orthogonal
    to the tangent at the center."""
    e1, e2 = circle_frame(tangent)
    theta = 2.0 * np.pi * np.arange(n_quad) / n_quad
    return (np.asarray(center)[None, :]
            + radius * (np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2))


def curve_dof_tangents(target: FunctionSpace):
    """Unit tangent per target dof: normalized average of the tangents of
    the adjacent curve cells (well defined at polyline joints)."""
    mesh = target.mesh
    if mesh.tdim != 1:
        raise UnsupportedReductionError("averages target curve meshes only")
    cell_t = mesh.vertices[mesh.cells[:, 1]] - mesh.vertices[mesh.cells[:, 0]]
    cell_t = cell_t / np.linalg.norm(cell_t, axis=1)[:, None]
    acc = np.zeros((target.dim, mesh.gdim))
    for c in range(mesh.num_cells):
        for dof in target.dofmap[c]:
            acc[dof] += cell_t[c]
    norms = np.linalg.norm(acc, axis=1)
    if np.any(norms < 1e-14):
        raise UnsupportedReductionError("degenerate tangent at a curve dof")
    return acc / norms[:, None]


def average_matrix(source: FunctionSpace, target: FunctionSpace,
                   radius: float, n_quad: int = 16):
    """Circle-average rows: row i is the mean of source basis rows over
    ``n_quad`` uniform points on the circle of ``radius`` around dof i in
    the plane normal to the curve tangent.  Out-of-domain circle points are
    a hard error naming the dof."""
    if source.ncomp != 1:
        raise UnsupportedReductionError("averages support scalar sources only")
    tangents = curve_dof_tangents(target)
    rows, cols, vals = [], [], []
    for dof in range(target.dim):
        pts = circle_points(target.dof_coords[dof], tangents[dof], radius, n_quad)
        for p in pts:
            try:
                c, v = basis_row(source, p)
            except OutOfDomainError:
                raise OutOfDomainError(p, detail=f"circle point of curve dof {dof}") from None
            rows.extend([dof] * len(c))
            cols.extend(c)
            vals.extend(v[0] / n_quad)
    m = sp.coo_matrix((vals, (rows, cols)), shape=(target.dim, source.dim)).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


# -- cache ----------------------------------------------------------------------

_BUILDERS = {
    "trace": lambda src, tgt, kind: trace_matrix(src, tgt),
    "restrict": lambda src, tgt, kind: restriction_matrix(src, tgt),
    "average": lambda src, tgt, kind: average_matrix(src, tgt, kind.radius, kind.n_quad),
}


class ReductionCache:
    """Build-once map keyed by (source space, target mesh, kind, params)."""

    def __init__(self):
        self._store = {}
        self._lock = threading.Lock()
        self.build_count = 0

    def clear(self):
        with self._lock:
            self._store.clear()
            self.build_count = 0

    def get_or_build(self, source: FunctionSpace, target_mesh: Mesh,
                     kind: ReductionKind) -> ReductionMatrix:
        key = (source.uid, target_mesh.uid, kind.name, kind.params())
        with self._lock:
            hit = self._store.get(key)
            if hit is not None:
                return hit
            target = deduce_reduced_space(source, target_mesh, kind)
            matrix = _BUILDERS[kind.name](source, target, kind)
            built = ReductionMatrix(kind, source, target, matrix)
            self._store[key] = built
            self.build_count += 1
            return built


default_cache = ReductionCache()


def reduction_matrix(source, target_mesh, kind, cache: ReductionCache | None = None):
    """Cached construction of a reduction matrix and its deduced target space."""
    return (cache or default_cache).get_or_build(source, target_mesh, kind)
