"""Adaptive finite element gradient flow for Gross-Pitaevskii ground states."""
from .driver import RunConfig, RunReport, parse_config, run
from .fem import FeSpace, Problem
from .mesh import DomainSpec, build_initial_mesh, refine
from .potential import parse_potential

__all__ = ["DomainSpec", "FeSpace", "Problem", "RunConfig", "RunReport", "build_initial_mesh",
           "parse_config", "parse_potential", "refine", "run"]
__version__ = "0.1.0"
