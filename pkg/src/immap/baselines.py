"""Reference reconstructions: zero-filled adjoint and Tikhonov CG-SENSE."""

import warnings

import numpy as np

from .cg import cg_solve
from .operators import EncodingOperator

__all__ = ["zero_filled_recon", "cg_sense"]


def _encoding(maps, mask):
    return maps if isinstance(maps, EncodingOperator) else EncodingOperator(maps, mask)


def zero_filled_recon(y, maps, mask=None):
    """``A^H y``."""
    return _encoding(maps, mask).adjoint(np.asarray(y, dtype=np.complex128))


def cg_sense(y, maps, mask=None, noise=None, lam=1e-2, tol=1e-6, max_iter=200):
    """Solve ``(A^H Sigma_y^{-1} A + lam I) x = A^H Sigma_y^{-1} y`` by CG.

    ``noise=None`` means unit variance.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    enc = _encoding(maps, mask)
    y = np.asarray(y, dtype=np.complex128)
    inv = (lambda v: v) if noise is None else noise.solve

    def normal(x):
        return enc.adjoint(inv(enc.forward(x))) + lam * x

    x, rep = cg_solve(normal, enc.adjoint(inv(y)), tol=tol, max_iter=max_iter)
    if not rep.converged:
        warnings.warn(f"CG-SENSE stopped at relative residual {rep.final_relative_residual:.2e}", RuntimeWarning)
    return x
