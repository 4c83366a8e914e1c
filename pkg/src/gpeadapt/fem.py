"""P1 finite elements with homogeneous Dirichlet conditions.

All integrals that involve the potential or the quartic term use the same
six-point degree-4 rule, so the discrete energy, the weighted operator and
the eigenvalue identity ``u^T A_u u = 2 E(u) + beta * int u^4`` agree to
rounding error.  The exception is a point singularity of the potential
(such as ``1/|x|``) at a mesh vertex: elements close to it integrate their
potential terms with a rule split at the singular point, see
``near_singular_rule``, consistently everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import DomainSpec, Mesh


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray  # (nq, 3) barycentric coordinates
    weights: np.ndarray  # (nq,), sum to 1


def quad_rule() -> QuadRule:
    """Symmetric 6-point rule, exact for total degree 4."""
    r = np.sqrt(38.0 - 44.0 * np.sqrt(0.4))
    a1 = (8.0 - np.sqrt(10.0) + r) / 18.0
    a2 = (8.0 - np.sqrt(10.0) - r) / 18.0
    s = np.sqrt(213125.0 - 53320.0 * np.sqrt(10.0))
    w1 = (620.0 + s) / 3720.0
    w2 = (620.0 - s) / 3720.0
    pts = []
    for a in (a1, a2):
        b = 1.0 - 2.0 * a
        pts += [(b, a, a), (a, b, a), (a, a, b)]
    return QuadRule(np.array(pts), np.array([w1] * 3 + [w2] * 3))


QUAD = quad_rule()


NEAR_RADIAL, NEAR_ANGULAR = 3, 16
# elements whose centroid lies within NEAR_REACH diameters of a singular
# point use the split rule below
NEAR_REACH = 32.0


def near_singular_rule(corners: np.ndarray, point: np.ndarray):
    """Quadrature on triangles split at a point singularity.

    ``corners`` has shape (n, 3, 2).  Every triangle ``(p0, p1, p2)`` is the
    signed sum of the three triangles ``(s, p_k, p_k+1)``, and each of those
    gets a Gauss rule on the unit square collapsed onto ``s``.  The
    Jacobian vanishes linearly at ``s`` and cancels a ``1/|x - s|``
    singularity, so the integrand is polynomial along rays and smooth in
    the angle.  When ``s`` is a vertex two of the pieces have zero weight.

    Returns barycentric points (n, nq, 3) and weights (n, nq) that sum to
    one on each triangle, so ``int_T f = area * sum(w * f)``.
    """
    corners = np.asarray(corners, dtype=float)
    n = len(corners)
    gu, wu = np.polynomial.legendre.leggauss(NEAR_RADIAL)
    gv, wv = np.polynomial.legendre.leggauss(NEAR_ANGULAR)
    u, v = 0.5 * (gu + 1.0), 0.5 * (gv + 1.0)
    U, Vv = (a.ravel() for a in np.meshgrid(u, v, indexing="ij"))
    W = (np.outer(0.5 * wu, 0.5 * wv)).ravel() * U

    p0 = corners[:, 0]
    d1, d2 = corners[:, 1] - p0, corners[:, 2] - p0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    r = point[None, :] - p0
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    ls = np.column_stack([1.0 - l1 - l2, l1, l2])  # barycentrics of s

    bary, weights = [], []
    eye = np.eye(3)
    for k in range(3):
        a, b = corners[:, k] - point, corners[:, (k + 1) % 3] - point
        cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        edge = (1.0 - Vv)[:, None] * eye[k] + Vv[:, None] * eye[(k + 1) % 3]  # (nq, 3)
        bary.append((1.0 - U)[None, :, None] * ls[:, None, :] + U[None, :, None] * edge[None])
        weights.append(W[None, :] * (2.0 * cross / det)[:, None])
    return np.concatenate(bary, axis=1), np.concatenate(weights, axis=1)


def near_singular_elements(corners: np.ndarray, points: np.ndarray):
    """Pair every triangle with the closest singular point within reach.

    Returns ``(elements, which)`` with ``which`` indexing ``points``.
    """
    corners = np.asarray(corners, dtype=float)
    if len(points) == 0 or len(corners) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    centroid = corners.mean(axis=1)
    diam = np.max(np.linalg.norm(corners - np.roll(corners, 1, axis=1), axis=2), axis=1)
    dist = np.linalg.norm(centroid[:, None, :] - points[None, :, :], axis=2)
    which = np.argmin(dist, axis=1)
    near = dist[np.arange(len(corners)), which] < NEAR_REACH * diam
    elements = np.flatnonzero(near)
    return elements, which[elements]


def split_rule(corners: np.ndarray, points: np.ndarray, which: np.ndarray):
    """``near_singular_rule`` for triangles paired with different points."""
    nq = 3 * NEAR_RADIAL * NEAR_ANGULAR
    bary = np.empty((len(corners), nq, 3))
    weights = np.empty((len(corners), nq))
    for j in np.unique(which):
        sel = which == j
        bary[sel], weights[sel] = near_singular_rule(corners[sel], points[j])
    return bary, weights


@dataclass(frozen=True, eq=False)
class Problem:
    domain: DomainSpec
    potential: Callable  # V(x, y), vectorized over numpy arrays
    beta: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


def _evaluate_potential(problem: Problem, x, y) -> np.ndarray:
    with np.errstate(all="ignore"):
        vals = np.broadcast_to(np.asarray(problem.potential(x, y), dtype=float), np.shape(x))
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("potential is not finite at some quadrature point")
    if np.any(vals < 0):
        raise ValueError("potential takes negative values at some quadrature point")
    return vals


class FeSpace:
    """P1 space on ``mesh`` restricted to interior vertices.

    Geometry, the sparsity pattern and the potential-independent matrices
    are computed lazily and cached; the mesh is immutable.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        interior = ~mesh.boundary_vertex
        self.dof_of_vertex = np.full(mesh.n_vertices, -1, dtype=np.int64)
        self.dof_of_vertex[interior] = np.arange(interior.sum())
        self.vertex_of_dof = np.flatnonzero(interior)
        self.n_dofs = int(interior.sum())
        p = mesh.vertices[mesh.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.areas = 0.5 * det
        # Gradients of the three barycentric hats, shape (nt, 3, 2).
        g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
        self.grads = np.stack([-g1 - g2, g1, g2], axis=1)
        self.qp = np.einsum("qi,eik->eqk", QUAD.points, p)
        self._cache: dict = {}

    @property
    def n_elements(self) -> int:
        return self.mesh.n_triangles

    # -- vector helpers ---------------------------------------------------
    def full(self, v) -> np.ndarray:
        """Nodal values on all vertices (zero on the boundary)."""
        out = np.zeros(self.mesh.n_vertices)
        out[self.vertex_of_dof] = v
        return out

    def at_quadrature(self, v) -> np.ndarray:
        """Values of the P1 function ``v`` at quadrature points, (nt, nq)."""
        nodal = self.full(v)[self.mesh.triangles]
        return nodal @ QUAD.points.T

    def singular_points(self, problem: Problem) -> np.ndarray:
        """Mesh vertices at which the potential is not finite, (m, 2)."""
        key = ("spts", id(problem))
        if key not in self._cache:
            x, y = self.mesh.vertices.T
            with np.errstate(all="ignore"):
                vv = np.broadcast_to(np.asarray(problem.potential(x, y), dtype=float), x.shape)
            self._cache[key] = (problem, self.mesh.vertices[~np.isfinite(vv)])
        return self._cache[key][1]

    def singular_quadrature(self, problem: Problem):
        """Elements near a point singularity and their split rule.

        Returns ``(elements, bary, weights, Vq)``; those elements integrate
        every potential term with these points instead of ``QUAD``.
        """
        key = ("sing", id(problem))
        if key not in self._cache:
            points = self.singular_points(problem)
            corners = self.mesh.vertices[self.mesh.triangles]
            elements, which = near_singular_elements(corners, points)
            bary, weights = split_rule(corners[elements], points, which)
            pts = np.einsum("eqi,eik->eqk", bary, corners[elements])
            Vq = _evaluate_potential(problem, pts[..., 0], pts[..., 1])
            self._cache[key] = (problem, (elements, bary, weights, Vq))
        return self._cache[key][1]

    def potential_values(self, problem: Problem) -> np.ndarray:
        key = ("V", id(problem))
        if key not in self._cache:
            self._cache[key] = (
                problem,
                _evaluate_potential(problem, self.qp[..., 0], self.qp[..., 1]),
            )
        return self._cache[key][1]

    # -- sparse assembly --------------------------------------------------
    def _pattern(self):
        if "pattern" not in self._cache:
            dofs = self.dof_of_vertex[self.mesh.triangles]
            rows = np.repeat(dofs, 3, axis=1).ravel()
            cols = np.tile(dofs, (1, 3)).ravel()
            keep = (rows >= 0) & (cols >= 0)
            n = self.n_dofs
            keys = rows[keep].astype(np.int64) * n + cols[keep]
            uniq, slot = np.unique(keys, return_inverse=True)
            indptr = np.zeros(n + 1, dtype=np.int64)
            np.cumsum(np.bincount(uniq // n, minlength=n), out=indptr[1:])
            self._cache["pattern"] = (keep, slot, uniq % n, indptr, len(uniq))
        return self._cache["pattern"]

    def assemble(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum (nt, 3, 3) element matrices into a CSR matrix on the dofs."""
        keep, slot, indices, indptr, nnz = self._pattern()
        data = np.bincount(slot, weights=local.reshape(-1)[keep], minlength=nnz)
        return sp.csr_matrix((data, indices, indptr), shape=(self.n_dofs, self.n_dofs))

    def local_stiffness(self) -> np.ndarray:
        if "Kloc" not in self._cache:
            self._cache["Kloc"] = self.areas[:, None, None] * np.einsum(
                "eik,ejk->eij", self.grads, self.grads
            )
        return self._cache["Kloc"]

    def local_weighted_mass(self, weight_qp: np.ndarray) -> np.ndarray:
        """Element matrices of ``int w phi_i phi_j`` with ``w`` given at
        quadrature points."""
        phi = QUAD.points
        return np.einsum("q,e,eq,qi,qj->eij", QUAD.weights, self.areas, weight_qp, phi, phi,
                         optimize=True)

    def stiffness(self) -> sp.csr_matrix:
        if "K" not in self._cache:
            self._cache["K"] = self.assemble(self.local_stiffness())
        return self._cache["K"]

    def mass(self) -> sp.csr_matrix:
        if "M" not in self._cache:
            base = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
            self._cache["M"] = self.assemble(self.areas[:, None, None] * base)
        return self._cache["M"]

    def potential_mass(self, problem: Problem) -> sp.csr_matrix:
        """Matrix of ``int 2 V phi_i phi_j``."""
        key = ("MV", id(problem))
        if key not in self._cache:
            local = self.local_weighted_mass(2.0 * self.potential_values(problem))
            elements, bary, weights, Vq = self.singular_quadrature(problem)
            if len(elements):
                local[elements] = np.einsum("e,eq,eqi,eqj->eij", self.areas[elements],
                                            2.0 * weights * Vq, bary, bary, optimize=True)
            self._cache[key] = (problem, self.assemble(local))
        return self._cache[key][1]

    def integral_weights(self) -> np.ndarray:
        """``int phi_i dx`` for every dof; ``(v, 1)_{L2} = weights @ v``."""
        if "ones" not in self._cache:
            w = np.zeros(self.mesh.n_vertices)
            np.add.at(w, self.mesh.triangles, np.repeat(self.areas[:, None] / 3.0, 3, axis=1))
            self._cache["ones"] = w[self.vertex_of_dof]
        return self._cache["ones"]


def assemble_mass(space: FeSpace) -> sp.csr_matrix:
    return space.mass()


def assemble_operator(space: FeSpace, z, problem: Problem) -> sp.csr_matrix:
    """Matrix of ``a_z(v, w) = int grad v . grad w + 2 V v w + 2 beta z^2 v w``."""
    A = space.stiffness() + space.potential_mass(problem)
    if z is not None and problem.beta != 0.0:
        z = np.asarray(z, dtype=float)
        if z.shape != (space.n_dofs,):
            raise ValueError(f"weight vector has shape {z.shape}, expected ({space.n_dofs},)")
        zq = space.at_quadrature(z)
        A = A + space.assemble(space.local_weighted_mass(2.0 * problem.beta * zq**2))
    return A


def element_energies(space: FeSpace, v, problem: Problem):
    """Per-element ``(E1, E2)`` contributions of the P1 function ``v``."""
    v = np.asarray(v, dtype=float)
    nodal = space.full(v)[space.mesh.triangles]
    grad = np.einsum("ei,eik->ek", nodal, space.grads)
    vq = nodal @ QUAD.points.T
    wa = QUAD.weights[None, :] * space.areas[:, None]
    e1 = 0.5 * space.areas * np.einsum("ek,ek->e", grad, grad)
    e1 += np.sum(wa * space.potential_values(problem) * vq**2, axis=1)
    elements, bary, weights, Vq = space.singular_quadrature(problem)
    if len(elements):
        vs = np.einsum("eqi,ei->eq", bary, nodal[elements])
        e1[elements] = 0.5 * space.areas[elements] * np.einsum("ek,ek->e", grad[elements],
                                                                 grad[elements])
        e1[elements] += space.areas[elements] * np.sum(weights * Vq * vs**2, axis=1)
    e2 = 0.5 * problem.beta * np.sum(wa * vq**4, axis=1)
    return e1, e2


def energy(space: FeSpace, v, problem: Problem):
    """Return ``(E, E1, E2)`` with ``E1 = int |grad v|^2 / 2 + V v^2`` and
    ``E2 = int beta v^4 / 2``."""
    e1, e2 = element_energies(space, v, problem)
    E1, E2 = float(e1.sum()), float(e2.sum())
    return E1 + E2, E1, E2


def scaled_energy(E1: float, E2: float, mu: float) -> float:
    """Energy of ``mu * v`` from the parts of ``v``."""
    return mu**2 * E1 + mu**4 * E2


def energy_on_subset(space: FeSpace, v, problem: Problem, elements):
    elements = np.asarray(list(elements) if not isinstance(elements, np.ndarray) else elements,
                          dtype=np.int64)
    if elements.size == 0:
        return 0.0, 0.0
    e1, e2 = element_energies(space, v, problem)
    return float(e1[elements].sum()), float(e2[elements].sum())


def quartic_integral(space: FeSpace, v) -> float:
    vq = space.at_quadrature(v)
    return float(np.sum(QUAD.weights[None, :] * space.areas[:, None] * vq**4))


def l2_norm(space: FeSpace, v) -> float:
    return float(np.sqrt(v @ (space.mass() @ v)))


def initial_guess(space: FeSpace) -> np.ndarray:
    """Constant interior values scaled to unit L2 norm."""
    if space.n_dofs < 1:
        raise ValueError("finite element space has no degrees of freedom")
    ones = np.ones(space.n_dofs)
    return ones / np.sqrt(ones @ (space.mass() @ ones))
