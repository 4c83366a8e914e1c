"""CSV summaries and legacy VTK output."""
from __future__ import annotations

import csv

import numpy as np

from .fem import FeSpace

SUMMARY_HEADER = ["space", "dofs", "elements", "gfi_steps", "energy", "lambda", "energy_error"]


def write_csv(report, path) -> None:
    ref = report.config.reference_energy
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(SUMMARY_HEADER)
        for r in report.records:
            error = "" if ref is None else repr(abs(r.energy - ref))
            out.writerow([r.space, r.dofs, r.elements, r.gfi_steps, repr(r.energy),
                          repr(r.lam), error])


def write_trace_csv(report, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["space", "step", "energy"])
        for space, step, energy in report.trace:
            out.writerow([space, step, repr(energy)])


def write_vtk(space: FeSpace, u, path, title="gpeadapt ground state") -> None:
    mesh = space.mesh
    values = space.full(np.asarray(u, dtype=float))
    nv, nt = mesh.n_vertices, mesh.n_triangles
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        np.savetxt(fh, np.column_stack([mesh.vertices, np.zeros(nv)]), fmt="%.17g")
        fh.write(f"CELLS {nt} {4 * nt}\n")
        np.savetxt(fh, np.column_stack([np.full(nt, 3), mesh.triangles]), fmt="%d")
        fh.write(f"CELL_TYPES {nt}\n")
        np.savetxt(fh, np.full(nt, 5), fmt="%d")
        fh.write(f"POINT_DATA {nv}\n")
        fh.write("SCALARS u double 1\n")
        fh.write("LOOKUP_TABLE default\n")
        np.savetxt(fh, values, fmt="%.17g")
