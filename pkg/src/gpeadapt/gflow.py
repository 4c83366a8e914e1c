"""Projected Sobolev gradient flow on a fixed finite element space."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fem import FeSpace, Problem, assemble_operator, energy, l2_norm
from .linalg import solve_spd

log = logging.getLogger(__name__)

MAX_HALVINGS = 30
# decreases below a few ulps of E are rounding noise, not descent
ROUNDOFF = 4.0 * np.finfo(float).eps


class Stagnation(Exception):
    """No step length ``2**-m``, ``m <= MAX_HALVINGS``, lowers the energy."""


@dataclass
class GfiState:
    u: np.ndarray
    energy: float
    energy_parts: tuple[float, float]
    lam: float
    step_count: int = 0
    # A_u for the current u, kept so the next Riesz solve reuses it
    operator: object = field(default=None, repr=False, compare=False)


@dataclass
class SolverOptions:
    rel_tol: float = 1e-10
    max_iter: int | None = None
    method: str = "auto"


def eigenvalue(space: FeSpace, u, problem: Problem, operator=None) -> float:
    """Rayleigh quotient ``u^T A_u u`` of a normalized vector."""
    A = assemble_operator(space, u, problem) if operator is None else operator
    return float(u @ (A @ u))


def make_state(space: FeSpace, u, problem: Problem, step_count: int = 0,
               parts=None) -> GfiState:
    u = np.asarray(u, dtype=float)
    E, E1, E2 = energy(space, u, problem) if parts is None else parts
    A = assemble_operator(space, u, problem)
    return GfiState(u, E, (E1, E2), eigenvalue(space, u, problem, A), step_count, A)


def riesz_representative(space: FeSpace, u, problem: Problem, options=None, x0=None,
                         operator=None):
    """Solve ``A_u G = M u``; returns ``(G, a_u(G, G))``."""
    options = options or SolverOptions()
    A = assemble_operator(space, u, problem) if operator is None else operator
    rhs = space.mass() @ u
    G, _ = solve_spd(A, rhs, rel_tol=options.rel_tol, max_iter=options.max_iter, x0=x0,
                     method=options.method)
    # a_u(G, G) = (u, G) by the defining equation
    return G, float(G @ rhs)


def _normalized(space: FeSpace, v) -> np.ndarray:
    norm = l2_norm(space, v)
    if not norm > 0:
        raise FloatingPointError("gradient flow update has zero L2 norm")
    v = v / norm
    if space.integral_weights() @ v < 0:
        v = -v
    return v


def _candidate(space, state, G, aGG, tau):
    return _normalized(space, (1.0 - tau) * state.u + (tau / aGG) * G)


def gfi_step(space: FeSpace, state: GfiState, tau: float, problem: Problem,
             options=None) -> GfiState:
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"time step must lie in (0, 1], got {tau}")
    G, aGG = riesz_representative(space, state.u, problem, options,
                                  x0=state.u / state.lam, operator=state.operator)
    u = _candidate(space, state, G, aGG, tau)
    return make_state(space, u, problem, state.step_count + 1)


def adaptive_gfi_step(space: FeSpace, state: GfiState, problem: Problem, options=None):
    """One step with ``tau = max{2^-m : E(u+) < E(u)}``; returns
    ``(new_state, tau)`` or raises :class:`Stagnation`.

    A decrease counts only if it exceeds ``ROUNDOFF * E(u)``.
    """
    G, aGG = riesz_representative(space, state.u, problem, options,
                                  x0=state.u / state.lam, operator=state.operator)
    for m in range(MAX_HALVINGS + 1):
        tau = 2.0**-m
        u = _candidate(space, state, G, aGG, tau)
        parts = energy(space, u, problem)
        if parts[0] < state.energy - ROUNDOFF * abs(state.energy):
            new = make_state(space, u, problem, state.step_count + 1, parts)
            if m:
                log.debug("time step reduced to 2^-%d", m)
            return new, tau
    raise Stagnation(f"no energy decrease after {MAX_HALVINGS} halvings")
