"""Sparse SPD solves.

Matrices are ``scipy.sparse`` CSR matrices; the iterative solver is a
Jacobi-preconditioned conjugate gradient method written against plain
matrix-vector products.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

DENSE_LIMIT = 200


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    method: str = "cg"


class SolverError(RuntimeError):
    def __init__(self, message, report: SolveReport):
        super().__init__(f"{message} (iterations={report.iterations}, "
                         f"relative residual={report.relative_residual:.3e})")
        self.report = report


def residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(b - A @ x)
    return r / nb if nb > 0 else r


def pcg(A, b, x0=None, rel_tol=1e-10, max_iter=None):
    """Jacobi-preconditioned CG.  Stops on the true relative residual."""
    n = len(b)
    if max_iter is None:
        max_iter = 10 * n
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has a nonpositive diagonal entry", SolveReport(0, np.inf))
    inv_diag = 1.0 / diag
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n), SolveReport(0, 0.0)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    target = rel_tol * nb
    rnorm = np.linalg.norm(r)
    it = 0
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    while rnorm > target and it < max_iter:
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        it += 1
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            # guard against drift of the recursive residual
            r = b - A @ x
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                break
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    report = SolveReport(it, residual(A, x, b))
    if report.relative_residual > rel_tol:
        raise SolverError("conjugate gradients did not converge", report)
    return x, report


def solve_dense(A, b):
    dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(dense), b)
    return x, SolveReport(0, residual(A, x, b), method="dense")


def solve_spd(A, b, rel_tol=1e-10, max_iter=None, x0=None, method="auto"):
    """Solve ``A x = b`` for SPD ``A``; returns ``(x, SolveReport)``.

    ``method="auto"`` uses a dense Cholesky factorization below
    ``DENSE_LIMIT`` unknowns and PCG above.
    """
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side is not finite")
    if method == "auto":
        method = "dense" if len(b) < DENSE_LIMIT else "cg"
    if method == "dense":
        return solve_dense(A, b)
    if method == "cg":
        if not sp.issparse(A):
            A = sp.csr_matrix(A)
        return pcg(A, b, x0=x0, rel_tol=rel_tol, max_iter=max_iter)
    raise ValueError(f"unknown solver method {method!r}")
