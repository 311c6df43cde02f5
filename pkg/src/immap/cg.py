"""Conjugate gradient for Hermitian positive-definite systems."""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .core import NumericalError

__all__ = ["CgReport", "cg_solve"]


@dataclass
class CgReport:
    """Diagnostics of one CG solve.

    ``residual_history`` holds the best relative residual reached after each
    iteration (index 0 is the initial guess), so it is non-increasing.
    """

    iterations: int
    final_relative_residual: float
    converged: bool
    residual_history: List[float] = field(default_factory=list)


def cg_solve(op, b, tol=1e-6, max_iter=100, x0=None, preconditioner=None):
    """Solve ``op(x) = b`` for a Hermitian positive-definite ``op``.

    Parameters
    ----------
    op : callable or LinearOperator
        Applies the system matrix; any array shape is allowed.
    b : ndarray
    tol : float
        Target relative residual ``||op(x) - b|| / ||b||``.
    max_iter : int
    x0 : ndarray, optional
        Warm start.
    preconditioner : ndarray, optional
        Positive diagonal ``M`` shaped like ``b``; ``M^{-1}`` is applied
        element-wise (Jacobi preconditioning).

    Returns
    -------
    x : ndarray
        Converged solution, or the iterate with the smallest residual when
        ``max_iter`` is exhausted.
    report : CgReport
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    b = np.asarray(b)
    if not np.all(np.isfinite(b)):
        raise NumericalError("right-hand side is not finite")
    apply = op.forward if hasattr(op, "forward") else op

    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return np.zeros_like(b, dtype=np.result_type(b, np.complex128)), CgReport(0, 0.0, True, [0.0])

    if x0 is None:
        x = np.zeros_like(b, dtype=np.result_type(b, np.complex128))
        r = b.astype(x.dtype, copy=True)
    else:
        x = np.array(x0, dtype=np.result_type(x0, b, np.complex128))
        r = b - apply(x)

    def precond(v):
        return v if preconditioner is None else v / preconditioner

    rel = np.linalg.norm(r) / b_norm
    best_x, best_rel = x.copy(), rel
    history = [rel]
    if rel <= tol:
        return x, CgReport(0, float(rel), True, history)

    s = precond(r)
    p = s.copy()
    rs = np.vdot(r, s).real
    it = 0
    for it in range(1, max_iter + 1):
        q = apply(p)
        pq = np.vdot(p, q).real
        if not np.isfinite(pq) or pq <= 0:
            if not np.isfinite(pq):
                raise NumericalError(f"non-finite curvature at CG iteration {it}")
            break
        alpha = rs / pq
        x = x + alpha * p
        r = r - alpha * q
        rel = np.linalg.norm(r) / b_norm
        if not np.isfinite(rel):
            raise NumericalError(f"non-finite residual at CG iteration {it}")
        if rel < best_rel:
            best_x, best_rel = x, rel
        history.append(best_rel)
        if rel <= tol:
            break
        s = precond(r)
        rs_new = np.vdot(r, s).real
        p = s + (rs_new / rs) * p
        rs = rs_new

    # recursive residuals drift; confirm with the true residual
    true_rel = np.linalg.norm(apply(best_x) - b) / b_norm
    return best_x, CgReport(it, float(true_rel), bool(true_rel <= tol), history)
