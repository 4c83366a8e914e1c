"""Energy-decay indicators, Doerfler marking and refinement of the space.

The indicator of an element ``K`` is the energy reduction obtained by one
``tau = 1`` gradient flow step in ``span{xi_1, .., xi_m, u}`` where the
``xi_i`` are the hats at the interior edge midpoints of ``K`` on the patch
in which ``K`` is red-refined and its neighbours are green-bisected.

Local node numbering inside a patch::

    0, 1, 2   vertices a, b, c of K
    3, 4, 5   midpoints of the edges a-b, b-c, c-a
    6, 7, 8   vertex opposite the edge a-b, b-c, c-a in the neighbour
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fem import (QUAD, FeSpace, Problem, _evaluate_potential, element_energies,
                  near_singular_elements, split_rule)
from .gflow import GfiState, make_state
from .mesh import refine

log = logging.getLogger(__name__)

RED_CHILDREN = [(0, 3, 5), (3, 1, 4), (5, 4, 2), (3, 4, 5)]
GREEN_CHILDREN = [
    [(1, 3, 6), (3, 0, 6)],
    [(2, 4, 7), (4, 1, 7)],
    [(0, 5, 8), (5, 2, 8)],
]
CHILDREN = np.array(RED_CHILDREN + [c for pair in GREEN_CHILDREN for c in pair])
CHUNK = 8192


class NoRefinement(Exception):
    """All indicators vanish, so marking selects nothing."""


@dataclass
class LocalSystem:
    operator: np.ndarray  # (4, 4), basis (xi_0, xi_1, xi_2, u)
    gram: np.ndarray  # (4, 4) L2 Gram matrix
    rhs: np.ndarray  # (4,)
    active: np.ndarray  # (3,) bool, which midpoints are dofs


@dataclass
class LocalCandidate:
    mu: float  # coefficient of u
    mu_xi: np.ndarray  # (3,) coefficients of the midpoint hats
    energy: float  # E of the candidate by the split formula
    decay: float  # E(u) - E(candidate), unclamped


def _patch_nodes(space: FeSpace, u_full, el):
    mesh = space.mesh
    T = mesh.triangles[el]
    N = mesh.neighbor[el]
    active = N >= 0
    Nsafe = np.where(active, N, 0)
    nodes = np.empty((len(el), 9), dtype=np.int64)
    nodes[:, :3] = T
    for k in range(3):
        a, b = T[:, k], T[:, (k + 1) % 3]
        d = mesh.triangles[Nsafe[:, k]].sum(axis=1) - a - b
        nodes[:, 6 + k] = np.where(active[:, k], d, a)
        nodes[:, 3 + k] = -1
    X = np.empty((len(el), 9, 2))
    U = np.empty((len(el), 9))
    for i in (0, 1, 2, 6, 7, 8):
        X[:, i] = mesh.vertices[nodes[:, i]]
        U[:, i] = u_full[nodes[:, i]]
    for k in range(3):
        X[:, 3 + k] = 0.5 * (X[:, k] + X[:, (k + 1) % 3])
        U[:, 3 + k] = 0.5 * (U[:, k] + U[:, (k + 1) % 3])
    return X, U, active, Nsafe


def _near_children(space, problem, Xc, mask):
    """Active children close to a point singularity, with their split rule.

    Returns ``(patch, child, bary, weights, V)`` for those children, or
    ``None`` when there are none.
    """
    points = space.singular_points(problem)
    if len(points) == 0:
        return None
    ii, cc = np.nonzero(mask)
    sel, which = near_singular_elements(Xc[ii, cc], points)
    if len(sel) == 0:
        return None
    ii, cc = ii[sel], cc[sel]
    bary, weights = split_rule(Xc[ii, cc], points, which)
    pts = np.einsum("sqi,sik->sqk", bary, Xc[ii, cc])
    return ii, cc, bary, weights, _evaluate_potential(problem, pts[..., 0], pts[..., 1])


def _patch_batch(space, state, problem, el, e1, e2):
    """Local systems, candidates and split energies for elements ``el``."""
    n = len(el)
    u_full = space.full(state.u)
    X, U, active, Nsafe = _patch_nodes(space, u_full, el)

    Phi = np.zeros((n, 9, 4))
    for k in range(3):
        Phi[:, 3 + k, k] = active[:, k]
    Phi[:, :, 3] = U

    mask = np.ones((n, len(CHILDREN)), dtype=bool)
    for k in range(3):
        mask[:, 4 + 2 * k] = mask[:, 5 + 2 * k] = active[:, k]
    Xc = X[:, CHILDREN]  # (n, 10, 3, 2)
    Phic = Phi[:, CHILDREN]  # (n, 10, 3, 4)

    d1 = Xc[:, :, 1] - Xc[:, :, 0]
    d2 = Xc[:, :, 2] - Xc[:, :, 0]
    det = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    det = np.where(mask, det, 1.0)
    area = np.where(mask, 0.5 * det, 0.0)
    g1 = np.stack([d2[..., 1], -d2[..., 0]], axis=-1) / det[..., None]
    g2 = np.stack([-d1[..., 1], d1[..., 0]], axis=-1) / det[..., None]
    grads = np.stack([-g1 - g2, g1, g2], axis=2)  # (n, 10, 3, 2)

    gb = np.einsum("ecik,ecib->ecbk", grads, Phic)
    K = np.einsum("ec,ecbk,ecdk->ebd", area, gb, gb)

    Xq = np.einsum("qi,ecik->ecqk", QUAD.points, Xc)
    Xq = np.where(mask[:, :, None, None], Xq, Xq[:, :1])
    Vq = _evaluate_potential(problem, Xq[..., 0], Xq[..., 1])
    phiq = np.einsum("qi,ecib->ecqb", QUAD.points, Phic)
    uq = phiq[..., 3]
    wq = QUAD.weights[None, None, :] * area[..., None]
    weight = 2.0 * Vq + 2.0 * problem.beta * uq**2
    Mw = np.einsum("ecq,ecqb,ecqd->ebd", wq * weight, phiq, phiq, optimize=True)
    M0 = np.einsum("ecq,ecqb,ecqd->ebd", wq, phiq, phiq, optimize=True)

    near = _near_children(space, problem, Xc, mask)
    if near is not None:
        ii, cc, bary, ws, Vs = near
        ws = ws * area[ii, cc][:, None]
        phi = np.einsum("sqi,sib->sqb", bary, Phic[ii, cc])
        fix = np.einsum("sq,sqb,sqd->sbd", 2.0 * ws * Vs, phi, phi, optimize=True)
        fix -= np.einsum("sq,sqb,sqd->sbd", 2.0 * wq[ii, cc] * Vq[ii, cc], phiq[ii, cc],
                         phiq[ii, cc], optimize=True)
        np.add.at(Mw, ii, fix)

    A = K + Mw
    # the u-u couplings are global: a_u(u, u) = lambda(u) and (u, u) = 1
    A[:, 3, 3] = state.lam
    M0[:, 3, 3] = 1.0
    for k in range(3):
        A[~active[:, k], k, k] = 1.0
    rhs = M0[:, :, 3].copy()

    try:
        coef = np.linalg.solve(A, rhs[..., None])[..., 0]
        ok = np.ones(n, dtype=bool)
    except np.linalg.LinAlgError:
        coef = np.zeros((n, 4))
        ok = np.zeros(n, dtype=bool)
        for i in range(n):
            try:
                coef[i] = np.linalg.solve(A[i], rhs[i])
                ok[i] = True
            except np.linalg.LinAlgError:
                log.warning("singular local system on element %d", el[i])
        coef[~ok, 3] = 1.0

    # tau = 1: the candidate is the Riesz representative, L2-normalized
    norm2 = np.einsum("eb,ebd,ed->e", coef, M0, coef)
    coef = coef / np.sqrt(norm2)[:, None]
    mu = coef[:, 3]

    vals = np.einsum("ecib,eb->eci", Phic, coef)
    gv = np.einsum("ecik,eci->eck", grads, vals)
    vq = np.einsum("qi,eci->ecq", QUAD.points, vals)
    ep1 = 0.5 * np.einsum("ec,eck,eck->e", area, gv, gv) + np.einsum("ecq,ecq->e", wq * Vq, vq**2)
    ep2 = 0.5 * problem.beta * np.einsum("ecq,ecq->e", wq, vq**4)
    if near is not None:
        vs = np.einsum("sqi,si->sq", bary, vals[ii, cc])
        fix = np.sum(ws * Vs * vs**2, axis=1) - np.sum(wq[ii, cc] * Vq[ii, cc] * vq[ii, cc] ** 2,
                                                       axis=1)
        np.add.at(ep1, ii, fix)

    # patch contributions of u on the unrefined elements K and its neighbours
    c1 = e1[el] + np.sum(np.where(active, e1[Nsafe], 0.0), axis=1)
    c2 = e2[el] + np.sum(np.where(active, e2[Nsafe], 0.0), axis=1)
    E1, E2 = state.energy_parts
    mu2 = mu * mu
    split = mu2 * E1 + mu2 * mu2 * E2 - (mu2 * c1 + mu2 * mu2 * c2) + (ep1 + ep2)
    decay = (1.0 - mu2) * E1 + (1.0 - mu2 * mu2) * E2 + mu2 * c1 + mu2 * mu2 * c2 - ep1 - ep2
    decay[~ok] = 0.0
    return dict(A=A, M=M0, rhs=rhs, active=active, coef=coef, energy=split, decay=decay)


def energy_decay_indicators(space: FeSpace, state: GfiState, problem: Problem,
                            elements=None, clamp=True) -> np.ndarray:
    """Local energy decay of every element (or of ``elements``)."""
    e1, e2 = element_energies(space, state.u, problem)
    el_all = np.arange(space.n_elements) if elements is None else np.asarray(elements)
    out = np.empty(len(el_all))
    for start in range(0, len(el_all), CHUNK):
        el = el_all[start:start + CHUNK]
        out[start:start + CHUNK] = _patch_batch(space, state, problem, el, e1, e2)["decay"]
    return np.maximum(out, 0.0) if clamp else out


def local_energy_decay(space: FeSpace, state: GfiState, elem: int, problem: Problem) -> float:
    return float(energy_decay_indicators(space, state, problem, [elem])[0])


def _single(space, state, elem, problem):
    e1, e2 = element_energies(space, state.u, problem)
    return _patch_batch(space, state, problem, np.array([elem]), e1, e2)


def local_system(space: FeSpace, state: GfiState, elem: int, problem: Problem) -> LocalSystem:
    r = _single(space, state, elem, problem)
    return LocalSystem(r["A"][0], r["M"][0], r["rhs"][0], r["active"][0])


def local_candidate(space: FeSpace, state: GfiState, elem: int, problem: Problem) -> LocalCandidate:
    r = _single(space, state, elem, problem)
    c = r["coef"][0]
    return LocalCandidate(float(c[3]), c[:3].copy(), float(r["energy"][0]), float(r["decay"][0]))


def doerfler_mark(indicators, theta: float) -> np.ndarray:
    """Smallest set whose indicator sum reaches ``theta`` times the total.

    Ties are broken by ascending element index.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    eta = np.asarray(indicators, dtype=float)
    total = eta.sum()
    if total <= 0.0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(-eta, kind="stable")
    csum = np.cumsum(eta[order])
    count = int(np.searchsorted(csum, theta * total, side="left")) + 1
    return np.sort(order[:min(count, len(eta))])


def prolongate(u, old_space: FeSpace, new_space: FeSpace) -> np.ndarray:
    """Exact embedding of a P1 function into the refined space."""
    prov = new_space.mesh.provenance
    nv_old = old_space.mesh.n_vertices
    if prov is None or nv_old + len(prov) != new_space.mesh.n_vertices:
        raise ValueError("new mesh carries no provenance for the old mesh")
    old = old_space.full(u)
    new = np.concatenate([old, 0.5 * (old[prov[:, 0]] + old[prov[:, 1]])])
    return new[new_space.vertex_of_dof]


@dataclass
class AdaptResult:
    space: FeSpace
    state: GfiState
    indicators: np.ndarray
    marked: np.ndarray


def adapt_mesh(space: FeSpace, state: GfiState, theta: float, problem: Problem) -> AdaptResult:
    indicators = energy_decay_indicators(space, state, problem)
    marked = doerfler_mark(indicators, theta)
    if marked.size == 0:
        raise NoRefinement("all local energy decays vanish")
    new_space = FeSpace(refine(space.mesh, marked))
    u = prolongate(state.u, space, new_space)
    new_state = make_state(new_space, u, problem, state.step_count)
    return AdaptResult(new_space, new_state, indicators, marked)
