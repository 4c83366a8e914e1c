"""Built-in experiments.

Energies are written as ``int |grad u|^2 / 2 + V u^2 + beta u^4 / 2``, so a
functional given as ``1/2 int |grad u|^2 + W u^2 + b u^4`` has ``V = W / 2``
and ``beta = b``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import DomainSpec


@dataclass(frozen=True)
class Preset:
    domain: DomainSpec
    potential: str
    beta: float
    n0: int = 1
    cells: tuple[int, int] | None = None
    reference_energy: float | None = None
    note: str = ""


# Four Gaussian wells, lifted so that V >= 0.  The exact potential of the
# published experiment is not available; this one only mimics its shape.
_WELLS = (
    "10 - 4*exp(-((x-1.6)^2+(y-1.6)^2)) - 3.5*exp(-((x-1.6)^2+(y-3.4)^2))"
    " - 3*exp(-((x-4.7)^2+(y-1.6)^2)) - 2*exp(-((x-4.7)^2+(y-4.7)^2))"
)

PRESETS = {
    "lshape": Preset(DomainSpec.l_shape(), "0", 0.0, n0=2, reference_energy=9.6397238 / 2),
    "harmonic": Preset(DomainSpec.rectangle(-10, 10, -10, 10), "0.5*(x^2+9*y^2)", 0.0,
                       n0=1, reference_energy=2.0),
    "coulomb": Preset(DomainSpec.rectangle(-0.5, 0.5, -0.5, 0.5), "1/(2*sqrt(x^2+y^2))", 0.0,
                      n0=4, reference_energy=25.934923921168 / 2),
    "wells": Preset(DomainSpec.rectangle(0, 2 * np.pi, 0, 2 * np.pi), _WELLS, 0.0,
                    cells=(8, 8), note="stand-in potential, no reference value"),
    "harmonic_nl": Preset(DomainSpec.rectangle(-6, 6, -6, 6), "0.5*(x^2+y^2)", 1000.0,
                          n0=1, reference_energy=11.98605),
    "lattice": Preset(DomainSpec.rectangle(-6, 6, -6, 6),
                      "(x^2+y^2)/2+20+20*sin(2*pi*x)*sin(2*pi*y)", 1000.0,
                      cells=(8, 8), reference_energy=30.387533),
    "shifted_gauss": Preset(DomainSpec.rectangle(-8, 8, -8, 8),
                            "0.5*(x^2+y^2)+4*exp(-((x-1)^2+y^2))", 200.0,
                            n0=1, reference_energy=5.85058738),
}
