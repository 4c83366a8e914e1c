"""Conforming triangulations of rectangles and L-shaped domains.

Triangles are stored counterclockwise with the refinement edge first:
``tri = (a, b, c)`` is bisected through the midpoint of ``a-b`` and ``c``
is its newest vertex.  Local edge ``k`` of a triangle joins ``tri[k]`` and
``tri[(k + 1) % 3]``.

Refinement is newest-vertex bisection.  A marked triangle is split into
four children by bisecting all three of its edges; hanging nodes created in
neighbours are closed by further bisections.  Every refinement therefore
produces a nested P1 space and all descendants of the initial right
isosceles triangles stay right isosceles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned rectangle or L-shape.

    The L-shape is the outer rectangle with its lower-right quarter
    ``[xm, x1] x [y0, ym]`` removed; the default bounds give
    ``(0, 2)^2 minus [1, 2] x [0, 1]``.
    """

    kind: str = "rectangle"
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rectangle", "l_shape"):
            raise MeshError(f"unknown domain kind {self.kind!r}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise MeshError("domain bounds must satisfy x0 < x1 and y0 < y1")

    @classmethod
    def rectangle(cls, x0, x1, y0, y1):
        return cls("rectangle", float(x0), float(x1), float(y0), float(y1))

    @classmethod
    def l_shape(cls, x0=0.0, x1=2.0, y0=0.0, y1=2.0):
        return cls("l_shape", float(x0), float(x1), float(y0), float(y1))

    @property
    def area(self) -> float:
        full = (self.x1 - self.x0) * (self.y1 - self.y0)
        return full if self.kind == "rectangle" else 0.75 * full

    def contains_cell(self, xc, yc):
        """True for grid cells (given by their centres) inside the domain."""
        inside = np.ones(np.shape(xc), dtype=bool)
        if self.kind == "l_shape":
            xm = 0.5 * (self.x0 + self.x1)
            ym = 0.5 * (self.y0 + self.y1)
            inside &= ~((xc > xm) & (yc < ym))
        return inside


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), ccw, refinement edge tri[0]-tri[1]
    boundary_vertex: np.ndarray  # (nv,) bool
    neighbor: np.ndarray  # (nt, 3), triangle across local edge k or -1
    green_flag: np.ndarray  # (nt,) bool, child of a closure-only bisection
    parent: np.ndarray  # (nt,) index into the previous mesh, -1 for roots
    # (n_new, 2) endpoints of the parent edge of every vertex added by the
    # last refinement; new vertex i has index n_vertices - n_new + i.
    provenance: np.ndarray | None = None
    _edges: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edges(self):
        """Return ``(edge_vertices, tri_edge)`` with unique sorted edges."""
        if "edges" not in self._edges:
            self._edges["edges"] = _edge_structure(self.triangles, self.n_vertices)
        return self._edges["edges"]

    def min_angle(self) -> float:
        p = self.vertices[self.triangles]
        angles = []
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", u, v) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
            )
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))


def _edge_structure(triangles, nv):
    nt = len(triangles)
    a = triangles
    b = np.roll(triangles, -1, axis=1)
    lo = np.minimum(a, b).ravel()
    hi = np.maximum(a, b).ravel()
    keys = lo.astype(np.int64) * nv + hi
    uniq, inverse = np.unique(keys, return_inverse=True)
    edge_vertices = np.column_stack([uniq // nv, uniq % nv])
    return edge_vertices, inverse.reshape(nt, 3)


def _neighbors(triangles, nv):
    nt = len(triangles)
    _, tri_edge = _edge_structure(triangles, nv)
    flat = tri_edge.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_edges = flat[order]
    counts = np.bincount(flat)
    if counts.max(initial=0) > 2:
        raise MeshError("non-manifold mesh: an edge is shared by more than two triangles")
    neighbor = np.full(nt * 3, -1, dtype=np.int64)
    pair = np.flatnonzero(sorted_edges[1:] == sorted_edges[:-1])
    first, second = order[pair], order[pair + 1]
    neighbor[first] = second // 3
    neighbor[second] = first // 3
    return neighbor.reshape(nt, 3)


def _finish(vertices, triangles, green, parent, provenance=None):
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    neighbor = _neighbors(triangles, len(vertices))
    boundary = np.zeros(len(vertices), dtype=bool)
    tri_k, edge_k = np.nonzero(neighbor < 0)
    boundary[triangles[tri_k, edge_k]] = True
    boundary[triangles[tri_k, (edge_k + 1) % 3]] = True
    return Mesh(
        vertices=np.ascontiguousarray(vertices, dtype=float),
        triangles=triangles,
        boundary_vertex=boundary,
        neighbor=neighbor,
        green_flag=np.asarray(green, dtype=bool),
        parent=np.asarray(parent, dtype=np.int64),
        provenance=provenance,
    )


def build_initial_mesh(domain: DomainSpec, n0: int = 1, cells=None) -> Mesh:
    """Uniform grid of squares of side ``1/n0``, each cut along its
    bottom-left to top-right diagonal.

    ``cells = (nx, ny)`` overrides ``n0`` with an explicit cell count for
    domains whose sides are not commensurate with a unit grid.
    """
    if cells is None and (int(n0) != n0 or n0 < 1):
        raise MeshError(f"n0 must be a positive integer, got {n0!r}")
    sizes = []
    for axis, (lo, hi) in enumerate(((domain.x0, domain.x1), (domain.y0, domain.y1))):
        cells_ = (hi - lo) * int(n0) if cells is None else cells[axis]
        if domain.kind == "l_shape":
            cells_ok = abs(cells_ / 2 - round(cells_ / 2)) < 1e-9
        else:
            cells_ok = abs(cells_ - round(cells_)) < 1e-9
        if not cells_ok or round(cells_) < 1:
            raise MeshError(f"domain side [{lo}, {hi}] is not aligned with the grid")
        sizes.append(int(round(cells_)))
    nx, ny = sizes
    xs = np.linspace(domain.x0, domain.x1, nx + 1)
    ys = np.linspace(domain.y0, domain.y1, ny + 1)
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ii, jj = ii.ravel(), jj.ravel()
    keep = domain.contains_cell(0.5 * (xs[ii] + xs[ii + 1]), 0.5 * (ys[jj] + ys[jj + 1]))
    ii, jj = ii[keep], jj[keep]

    def vid(i, j):
        return j * (nx + 1) + i

    v00, v10, v11, v01 = vid(ii, jj), vid(ii + 1, jj), vid(ii + 1, jj + 1), vid(ii, jj + 1)
    # Hypotenuse first so that the right-angle vertex is the newest vertex.
    lower = np.column_stack([v11, v00, v10])
    upper = np.column_stack([v00, v11, v01])
    tris = np.empty((2 * len(ii), 3), dtype=np.int64)
    tris[0::2] = lower
    tris[1::2] = upper

    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([gx.ravel(), gy.ravel()])
    used = np.zeros(len(verts), dtype=bool)
    used[tris.ravel()] = True
    renumber = np.cumsum(used) - 1
    nt = len(tris)
    return _finish(verts[used], renumber[tris], np.zeros(nt, bool), np.full(nt, -1))


def refine(mesh: Mesh, marked) -> Mesh:
    """Split every marked triangle into four and close hanging nodes.

    The returned mesh carries ``provenance``: for each new vertex, the old
    edge it bisects.  Old vertices keep their indices.
    """
    marked = np.unique(np.asarray(marked, dtype=np.int64).ravel())
    if marked.size == 0:
        raise MeshError("refine needs at least one marked triangle")
    if marked[0] < 0 or marked[-1] >= mesh.n_triangles:
        raise MeshError("marked triangle index out of range")

    edge_vertices, tri_edge = mesh.edges()
    split = np.zeros(len(edge_vertices), dtype=bool)
    split[tri_edge[marked].ravel()] = True
    # Closure: a triangle with any split edge must split its refinement edge.
    while True:
        touched = split[tri_edge].any(axis=1)
        missing = touched & ~split[tri_edge[:, 0]]
        if not missing.any():
            break
        split[tri_edge[missing, 0]] = True

    nv = mesh.n_vertices
    split_ids = np.flatnonzero(split)
    midpoint = np.full(len(edge_vertices), -1, dtype=np.int64)
    midpoint[split_ids] = nv + np.arange(len(split_ids))
    provenance = edge_vertices[split_ids]
    new_vertices = np.vstack(
        [mesh.vertices, 0.5 * (mesh.vertices[provenance[:, 0]] + mesh.vertices[provenance[:, 1]])]
    )

    t = mesh.triangles
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    m0, m1, m2 = (midpoint[tri_edge[:, k]] for k in range(3))
    s0, s1, s2 = (split[tri_edge[:, k]] for k in range(3))
    idx = np.arange(mesh.n_triangles)

    pieces = []  # (children, parent index, green flag)

    def emit(mask, children, green):
        if mask.any():
            for child in children:
                rows = np.column_stack([col[mask] for col in child])
                pieces.append((rows, idx[mask], np.full(mask.sum(), green)))

    emit(~s0, [(a, b, c)], False)
    # Keep the green flag of untouched triangles.
    if (~s0).any():
        rows, par, _ = pieces[-1]
        pieces[-1] = (rows, par, mesh.green_flag[par])
    emit(s0 & ~s1 & ~s2, [(c, a, m0), (b, c, m0)], True)
    emit(s0 & s1 & ~s2, [(c, a, m0), (m0, b, m1), (c, m0, m1)], False)
    emit(s0 & ~s1 & s2, [(m0, c, m2), (a, m0, m2), (b, c, m0)], False)
    emit(s0 & s1 & s2, [(m0, c, m2), (a, m0, m2), (m0, b, m1), (c, m0, m1)], False)

    tris = np.vstack([p[0] for p in pieces])
    parent = np.concatenate([p[1] for p in pieces])
    green = np.concatenate([p[2] for p in pieces])
    order = np.argsort(parent, kind="stable")
    return _finish(new_vertices, tris[order], green[order], parent[order], provenance)


def face_neighbors(mesh: Mesh, elem: int) -> set[int]:
    return {int(n) for n in mesh.neighbor[elem] if n >= 0}


@dataclass(frozen=True)
class PatchSpec:
    element: int
    patch_elements: tuple[int, ...]
    # local edge indices of ``element`` whose midpoints are interior dofs
    midpoint_edges: tuple[int, ...]
    midpoint_coords: np.ndarray

    @property
    def n_midpoints(self) -> int:
        return len(self.midpoint_edges)


def local_patch_space(mesh: Mesh, elem: int) -> PatchSpec:
    """Element, its face neighbours and the interior edge midpoints that
    carry the extra hat functions of the red-refined patch."""
    edges = tuple(k for k in range(3) if mesh.neighbor[elem, k] >= 0)
    if not edges:
        raise MeshError(f"corrupt mesh: triangle {elem} has all edges on the boundary")
    tri = mesh.triangles[elem]
    coords = np.array(
        [0.5 * (mesh.vertices[tri[k]] + mesh.vertices[tri[(k + 1) % 3]]) for k in edges]
    )
    patch = (int(elem),) + tuple(int(mesh.neighbor[elem, k]) for k in edges)
    return PatchSpec(int(elem), patch, edges, coords)


def check_conforming(mesh: Mesh, area: float | None = None, rtol: float = 1e-12) -> None:
    """Raise MeshError unless the mesh is conforming with positive areas."""
    areas = mesh.signed_areas()
    if np.any(areas <= 0):
        raise MeshError(f"{np.sum(areas <= 0)} triangles with nonpositive area")
    _, tri_edge = mesh.edges()
    counts = np.bincount(tri_edge.ravel())
    if counts.max() > 2:
        raise MeshError("edge shared by more than two triangles")
    # A hanging node shows up as a vertex lying in the interior of an edge.
    ev, _ = mesh.edges()
    boundary_edges = ev[counts == 1]
    p, q = mesh.vertices[boundary_edges[:, 0]], mesh.vertices[boundary_edges[:, 1]]
    mids = 0.5 * (p + q)
    lookup = {tuple(np.round(v, 12)) for v in mesh.vertices}
    hanging = sum(tuple(np.round(m, 12)) in lookup for m in mids)
    if hanging:
        raise MeshError(f"{hanging} hanging nodes")
    if area is not None and abs(areas.sum() - area) > rtol * area:
        raise MeshError(f"total area {areas.sum()} differs from {area}")
