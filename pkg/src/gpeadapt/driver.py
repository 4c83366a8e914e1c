"""Adaptive gradient flow procedure and its configuration."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .adapt import NoRefinement, adapt_mesh
from .fem import FeSpace, Problem, initial_guess, quartic_integral
from .gflow import SolverOptions, Stagnation, adaptive_gfi_step, make_state
from .linalg import SolverError
from .mesh import DomainSpec, build_initial_mesh
from .potential import parse_potential
from .presets import PRESETS

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class RunError(RuntimeError):
    pass


@dataclass
class RunConfig:
    domain: DomainSpec
    potential: str
    beta: float = 0.0
    n0: int = 1
    cells: tuple[int, int] | None = None
    theta: float = 0.5
    gamma: float = 0.1
    epsilon: float = 1e-8
    max_dofs: int = 10**6
    rel_tol: float = 1e-10
    max_gfi_steps: int = 500
    solver: str = "auto"
    reference_energy: float | None = None
    csv: str | None = None
    trace_csv: str | None = None
    vtk_prefix: str = "solution"
    vtk_every: int = 0
    name: str = "custom"

    def validate(self):
        if not 0 < self.theta < 1:
            raise ConfigError("theta must lie in (0, 1)")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")
        if self.max_gfi_steps < 1:
            raise ConfigError("max_gfi_steps must be positive")
        if self.vtk_every < 0:
            raise ConfigError("vtk_every must be nonnegative")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "RunConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        p = PRESETS[name]
        base = dict(domain=p.domain, potential=p.potential, beta=p.beta, n0=p.n0,
                    cells=p.cells, reference_energy=p.reference_energy, name=name)
        base.update(overrides)
        return cls(**base)


_FLOAT_KEYS = {"beta", "theta", "gamma", "epsilon", "rel_tol", "reference_energy"}
_INT_KEYS = {"n0", "max_dofs", "max_gfi_steps", "vtk_every"}
_STR_KEYS = {"potential", "csv", "trace_csv", "vtk_prefix", "solver"}


def _parse_domain(text: str) -> DomainSpec:
    parts = text.split()
    if not parts or parts[0] not in ("rectangle", "l_shape"):
        raise ConfigError(f"domain must start with 'rectangle' or 'l_shape': {text!r}")
    try:
        bounds = [float(v) for v in parts[1:]]
    except ValueError as exc:
        raise ConfigError(f"bad domain bounds in {text!r}") from exc
    if parts[0] == "l_shape" and not bounds:
        return DomainSpec.l_shape()
    if len(bounds) != 4:
        raise ConfigError("domain needs four bounds: x0 x1 y0 y1")
    try:
        return DomainSpec(parts[0], *bounds)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str, preset: str | None = None) -> RunConfig:
    """Read ``key = value`` lines; ``#`` starts a comment.

    A ``preset`` key (or argument) supplies defaults that the remaining keys
    override.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    name = preset or values.pop("preset", None)
    values.pop("preset", None)

    kwargs = {}
    for key, value in values.items():
        try:
            if key in _FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key in _INT_KEYS:
                kwargs[key] = int(float(value))
            elif key in _STR_KEYS:
                kwargs[key] = value
            elif key == "domain":
                kwargs[key] = _parse_domain(value)
            elif key == "cells":
                nx, ny = (int(v) for v in value.replace(",", " ").split())
                kwargs[key] = (nx, ny)
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc

    if name is not None:
        config = RunConfig.from_preset(name, **kwargs)
    else:
        missing = {"domain", "potential"} - kwargs.keys()
        if missing:
            raise ConfigError(f"missing keys without a preset: {', '.join(sorted(missing))}")
        config = RunConfig(**kwargs)
    config.validate()
    return config


def load_config(path, preset: str | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), preset)


@dataclass
class SpaceRecord:
    space: int
    dofs: int
    elements: int
    gfi_steps: int
    energy: float
    lam: float
    min_tau: float
    quartic: float  # int u^4


@dataclass
class RunReport:
    config: RunConfig
    records: list[SpaceRecord] = field(default_factory=list)
    trace: list[tuple[int, int, float]] = field(default_factory=list)
    termination: str = ""
    final_space: FeSpace | None = None
    final_state: object = None

    @property
    def final(self) -> SpaceRecord:
        return self.records[-1]


def make_problem(config: RunConfig) -> Problem:
    return Problem(config.domain, parse_potential(config.potential), config.beta)


def run(config: RunConfig, callback: Callable | None = None) -> RunReport:
    """Alternate gradient flow steps and energy-based refinement.

    ``callback(event, space_index, space, state)`` is called with
    ``event`` in ``{"start", "step", "done"}``: at the initial state of each
    space, after each gradient flow step, and once per space before marking.
    """
    config.validate()
    problem = make_problem(config)
    opts = SolverOptions(rel_tol=config.rel_tol, method=config.solver)
    space = FeSpace(build_initial_mesh(config.domain, config.n0, config.cells))
    if config.max_dofs <= space.n_dofs:
        raise ConfigError(f"max_dofs must exceed the {space.n_dofs} initial dofs")
    state = make_state(space, initial_guess(space), problem)
    report = RunReport(config)
    notify = callback or (lambda *args: None)
    N = 0

    while True:
        E0 = state.energy
        report.trace.append((N, 0, E0))
        notify("start", N, space, state)
        taus = []
        inc = delta = 0.0
        n = 0
        stagnated = False
        while n == 0 or (inc > config.gamma * delta and n < config.max_gfi_steps):
            previous = state.energy
            try:
                state, tau = adaptive_gfi_step(space, state, problem, opts)
            except Stagnation:
                stagnated = True
                break
            except SolverError as exc:
                raise RunError(f"space {N}, gradient flow step {n + 1}: {exc}") from exc
            n += 1
            taus.append(tau)
            inc = previous - state.energy
            delta = E0 - state.energy
            report.trace.append((N, n, state.energy))
            notify("step", N, space, state)

        report.records.append(SpaceRecord(
            N, space.n_dofs, space.n_elements, n, state.energy, state.lam,
            min(taus) if taus else math.nan, quartic_integral(space, state.u)))
        notify("done", N, space, state)
        log.info("space %d: dofs=%d steps=%d E=%.12g lambda=%.12g", N, space.n_dofs, n,
                 state.energy, state.lam)

        if stagnated and n == 0:
            report.termination = "stagnation"
            break
        if not delta > config.epsilon * state.energy:
            report.termination = "epsilon_criterion"
            break
        if space.n_dofs > config.max_dofs:
            report.termination = "dof_budget"
            break
        try:
            result = adapt_mesh(space, state, config.theta, problem)
        except NoRefinement:
            report.termination = "stagnation"
            break
        space, state = result.space, result.state
        N += 1

    report.final_space, report.final_state = space, state
    return report


def replace(config: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(config, **changes)
