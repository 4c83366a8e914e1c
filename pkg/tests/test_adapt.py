import itertools

import numpy as np
import pytest

from conftest import problem
from gpeadapt.adapt import (NoRefinement, adapt_mesh, doerfler_mark, energy_decay_indicators,
                            local_candidate, local_energy_decay, local_system, prolongate)
from gpeadapt.fem import FeSpace, energy, initial_guess, l2_norm, quartic_integral
from gpeadapt.gflow import Stagnation, adaptive_gfi_step, make_state
from gpeadapt.mesh import DomainSpec, build_initial_mesh, check_conforming, refine
from oracles import local_matrices_oracle, patch_energy_oracle


# -- Doerfler marking ------------------------------------------------------

def test_doerfler_examples():
    np.testing.assert_array_equal(doerfler_mark([4, 3, 2, 1], 0.5), [0, 1])
    np.testing.assert_array_equal(doerfler_mark([1, 2, 3, 4], 0.5), [2, 3])
    np.testing.assert_array_equal(doerfler_mark([2, 2, 2, 2], 0.5), [0, 1])
    eta = np.array([0.0, 1.0, 0.5, 0.0, 2.0])
    np.testing.assert_array_equal(doerfler_mark(eta, 1 - 1e-12), [1, 2, 4])
    assert doerfler_mark(np.zeros(4), 0.5).size == 0


@pytest.mark.parametrize("n,theta", [(10, 0.5), (7, 0.3), (13, 0.9)])
def test_doerfler_equal_indicators(n, theta):
    assert len(doerfler_mark(np.ones(n), theta)) == int(np.ceil(theta * n))


def test_doerfler_theta_range():
    for theta in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            doerfler_mark([1.0], theta)


def test_doerfler_minimal_cardinality(rng):
    for trial in range(200):
        n = int(rng.integers(1, 13))
        # integer draws produce plenty of ties
        eta = rng.integers(0, 5, size=n).astype(float) if trial % 2 else rng.random(n)
        theta = float(rng.uniform(0.05, 0.95))
        marked = doerfler_mark(eta, theta)
        total = eta.sum()
        if total == 0:
            assert marked.size == 0
            continue
        assert eta[marked].sum() >= theta * total
        best = next(k for k in range(n + 1)
                    if any(eta[list(c)].sum() >= theta * total
                           for c in itertools.combinations(range(n), k)))
        assert len(marked) == best


# -- prolongation --------------------------------------------------------

def test_prolongate_midpoint_average(rng):
    coarse = FeSpace(build_initial_mesh(DomainSpec.l_shape(), 2))
    v = rng.normal(size=coarse.n_dofs)
    fine = FeSpace(refine(coarse.mesh, [0, 3, 8]))
    old, new = coarse.full(v), fine.full(prolongate(v, coarse, fine))
    nv = coarse.mesh.n_vertices
    np.testing.assert_array_equal(new[:nv], old)
    for i, (p, q) in enumerate(fine.mesh.provenance):
        assert new[nv + i] == 0.5 * (old[p] + old[q])


def test_prolongate_two_four():
    coarse = FeSpace(build_initial_mesh(DomainSpec.rectangle(0, 3, 0, 2), 1))
    verts = coarse.mesh.vertices
    v = np.zeros(coarse.n_dofs)
    for xy, value in (([1, 1], 2.0), ([2, 1], 4.0)):
        vertex = np.flatnonzero((verts == xy).all(axis=1))[0]
        v[coarse.dof_of_vertex[vertex]] = value
    fine = FeSpace(refine(coarse.mesh, np.arange(coarse.n_elements)))
    w = fine.full(prolongate(v, coarse, fine))
    m = np.flatnonzero((fine.mesh.vertices == [1.5, 1]).all(axis=1))[0]
    assert w[m] == 3.0


def test_prolongate_preserves_energy_and_mass(rng):
    domain = DomainSpec.l_shape()
    prob = problem(domain, "1 + x^2", 4.0)
    space = FeSpace(build_initial_mesh(domain, 2))
    u = rng.random(space.n_dofs)
    u /= l2_norm(space, u)
    E = energy(space, u, prob)[0]
    fine = FeSpace(refine(space.mesh, [0, 4, 9]))
    w = prolongate(u, space, fine)
    assert l2_norm(fine, w) == pytest.approx(1.0, abs=1e-12)
    assert energy(fine, w, prob)[0] == pytest.approx(E, rel=1e-12)


def test_prolongate_needs_provenance():
    domain = DomainSpec.rectangle(0, 1, 0, 1)
    a = FeSpace(build_initial_mesh(domain, 2))
    b = FeSpace(build_initial_mesh(domain, 4))
    with pytest.raises(ValueError):
        prolongate(np.ones(a.n_dofs), a, b)


# -- local energy decay --------------------------------------------------

CASES = {
    "laplace_lshape": (DomainSpec.l_shape(), "0", 0.0, 2, [1, 6]),
    "harmonic_nonlinear": (DomainSpec.rectangle(-3, 3, -3, 3), "0.5*(x^2+y^2)", 100.0, 1, [8]),
    "coulomb": (DomainSpec.rectangle(-0.5, 0.5, -0.5, 0.5), "1/(2*sqrt(x^2+y^2))", 0.0, 4,
                [5, 14, 17]),
    "shifted_gauss": (DomainSpec.rectangle(-4, 4, -4, 4), "0.5*(x^2+y^2)+4*exp(-((x-1)^2+y^2))",
                      20.0, 1, [12, 30]),
}


def case_state(name, steps=3, random=False, seed=0):
    domain, potential, beta, n0, marks = CASES[name]
    prob = problem(domain, potential, beta)
    space = FeSpace(refine(build_initial_mesh(domain, n0), marks))
    if random:
        u = np.random.default_rng(seed).random(space.n_dofs)
        state = make_state(space, u / l2_norm(space, u), prob)
    else:
        state = make_state(space, initial_guess(space), prob)
        for _ in range(steps):
            state, _ = adaptive_gfi_step(space, state, prob)
    return space, state, prob


@pytest.mark.parametrize("name", sorted(CASES))
@pytest.mark.parametrize("random", [False, True])
def test_split_energy_matches_global_reassembly(name, random):
    space, state, prob = case_state(name, random=random)
    assert space.n_elements <= 500
    for elem in range(space.n_elements):
        cand = local_candidate(space, state, elem, prob)
        ref, new_space, v = patch_energy_oracle(space, elem, state.u, cand.mu, cand.mu_xi, prob)
        assert cand.energy == pytest.approx(ref, rel=1e-11)
        assert l2_norm(new_space, v) == pytest.approx(1.0, abs=1e-12)
        assert cand.decay == pytest.approx(state.energy - ref, abs=1e-11 * ref)


@pytest.mark.parametrize("name", sorted(CASES))
def test_local_system_matches_global_assembly(name):
    space, state, prob = case_state(name)
    for elem in range(0, space.n_elements, 3):
        system = local_system(space, state, elem, prob)
        A, M, active = local_matrices_oracle(space, elem, state.u, prob)
        np.testing.assert_array_equal(system.active, active)
        idx = np.append(np.flatnonzero(active), 3)
        sub = np.ix_(idx, idx)
        scale = np.abs(A[sub]).max()
        # the u-u entry is the cached coarse lambda, checked separately below;
        # for non-polynomial V it differs from refined-mesh quadrature
        A[3, 3] = system.operator[3, 3]
        np.testing.assert_allclose(system.operator[sub], A[sub], atol=1e-11 * scale)
        np.testing.assert_allclose(system.gram[sub], M[sub], atol=1e-13)
        np.testing.assert_allclose(system.rhs[idx], M[idx, 3], atol=1e-13)
        assert system.operator[3, 3] == pytest.approx(state.lam, rel=1e-12)
        assert np.allclose(system.operator, system.operator.T, atol=1e-14 * scale)


def test_uu_entry_is_cached_eigenvalue():
    space, state, prob = case_state("harmonic_nonlinear")
    lam = 2 * state.energy + prob.beta * quartic_integral(space, state.u)
    for elem in range(space.n_elements):
        assert local_system(space, state, elem, prob).operator[3, 3] == pytest.approx(
            lam, rel=1e-12)


def test_indicators_nonnegative_and_consistent():
    space, state, prob = case_state("shifted_gauss")
    raw = energy_decay_indicators(space, state, prob, clamp=False)
    eta = energy_decay_indicators(space, state, prob)
    assert np.all(eta >= 0) and np.all(np.isfinite(eta))
    np.testing.assert_array_equal(eta, np.maximum(raw, 0))
    for elem in (0, 7, space.n_elements - 1):
        assert local_energy_decay(space, state, elem, prob) == pytest.approx(eta[elem],
                                                                             rel=1e-12)


def test_batching_does_not_change_indicators(monkeypatch):
    import gpeadapt.adapt as adapt

    space, state, prob = case_state("coulomb")
    full = energy_decay_indicators(space, state, prob)
    monkeypatch.setattr(adapt, "CHUNK", 7)
    np.testing.assert_allclose(energy_decay_indicators(space, state, prob), full, rtol=1e-13,
                               atol=1e-16)


def test_locally_optimal_u_has_zero_decay():
    domain = DomainSpec.rectangle(0, 1, 0, 1)
    prob = problem(domain, "1 + x", 2.0)
    space = FeSpace(build_initial_mesh(domain, 8))
    # a single hat near one corner; elements far from it see u = 0 on
    # their whole patch, and u is then a local fixed point
    u = np.zeros(space.n_dofs)
    corner = np.argmin(np.linalg.norm(space.mesh.vertices - [0.125, 0.125], axis=1))
    u[space.dof_of_vertex[corner]] = 1.0
    state = make_state(space, u / l2_norm(space, u), prob)
    far = np.flatnonzero(space.mesh.vertices[space.mesh.triangles].min(axis=(1, 2)) > 0.5)
    assert far.size
    for elem in far[:10]:
        cand = local_candidate(space, state, elem, prob)
        assert cand.mu == pytest.approx(1.0, rel=1e-14)
        np.testing.assert_allclose(cand.mu_xi, 0.0, atol=1e-14)
        assert local_energy_decay(space, state, elem, prob) == 0.0


def converged_lshape():
    # h = 1/4; on the h = 1/2 mesh the outer corner triangles, where u
    # vanishes identically, still dominate
    domain = DomainSpec.l_shape()
    prob = problem(domain)
    space = FeSpace(build_initial_mesh(domain, 4))
    state = make_state(space, initial_guess(space), prob)
    for _ in range(2000):
        try:
            state, _ = adaptive_gfi_step(space, state, prob)
        except Stagnation:
            break
    return space, state, prob


def test_reentrant_corner_has_largest_indicator():
    space, state, prob = converged_lshape()
    eta = energy_decay_indicators(space, state, prob)
    corner_elems = np.flatnonzero(
        (np.abs(space.mesh.vertices[space.mesh.triangles] - [1.0, 1.0]).sum(axis=2) == 0).any(axis=1))
    assert int(np.argmax(eta)) in corner_elems


def test_adapt_mesh_refines_towards_the_corner():
    space, state, prob = converged_lshape()
    result = adapt_mesh(space, state, 0.5, prob)
    check_conforming(result.space.mesh, 3.0)
    assert result.space.n_dofs > space.n_dofs
    centroids = space.mesh.vertices[space.mesh.triangles].mean(axis=1)
    near = np.linalg.norm(centroids - [1.0, 1.0], axis=1) <= 0.25 + 1e-12
    assert near[result.marked].mean() > near.mean()
    assert near[result.marked].sum() >= 1
    new = result.state
    assert l2_norm(result.space, new.u) == pytest.approx(1.0, abs=1e-12)
    assert new.energy == pytest.approx(state.energy, rel=1e-12)
    assert new.lam == pytest.approx(2 * new.energy, rel=1e-12)


def test_adapt_mesh_with_vanishing_indicators(monkeypatch):
    import gpeadapt.adapt as adapt

    space, state, prob = converged_lshape()
    monkeypatch.setattr(adapt, "energy_decay_indicators",
                        lambda *args, **kw: np.zeros(space.n_elements))
    with pytest.raises(NoRefinement):
        adapt_mesh(space, state, 0.5, prob)
