"""Coarse-to-fine stochastic MAP ascent with an implicit denoiser prior.

Each iteration denoises the current iterate, reads the effective noise level
off the denoiser residual, pulls the Laplace-approximated likelihood gradient
back through the denoiser's VJP and takes a damped ascent step with injected
noise.  Without measurements the loop is the unconditional coarse-to-fine
sampler.
"""

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .cg import cg_solve
from .core import DimensionError, NumericalError, draw_complex_gaussian, make_rng
from .operators import EncodingOperator, NoiseModel, laplace_factor, sigma_t_operator

__all__ = [
    "ImmapConfig",
    "IterationRecord",
    "ImmapTrace",
    "step_size",
    "injected_noise_scale",
    "estimate_sigma",
    "likelihood_gradient",
    "immap_reconstruct",
    "prior_sample",
]


@dataclass(frozen=True)
class ImmapConfig:
    """Solver hyperparameters; defaults are the published ones."""

    beta: float = 0.05
    sigma_min: float = 0.01
    h0: float = 0.01
    cg_tol: float = 1e-6
    cg_max_iter: int = 100
    max_outer_iter: int = 1000
    seed: int = 0
    jacobi: bool = False

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if not self.sigma_min > 0:
            raise ValueError("sigma_min must be positive")
        if not 0 < self.h0 <= 1:
            raise ValueError("h0 must lie in (0, 1]")
        if not self.cg_tol > 0 or self.cg_max_iter < 1 or self.max_outer_iter < 1:
            raise ValueError("invalid CG or iteration limits")

    def to_dict(self):
        return asdict(self)


@dataclass
class IterationRecord:
    t: int
    sigma_t: float
    h_t: float
    gamma_t: float
    cg_iters: int
    cg_converged: bool
    data_residual: float
    prior_step: float


@dataclass
class ImmapTrace:
    records: List[IterationRecord] = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.records)

    @property
    def sigmas(self):
        return np.array([r.sigma_t for r in self.records])

    CSV_FIELDS = ("t", "sigma_t", "h_t", "gamma_t", "cg_iters", "data_residual")

    def to_rows(self):
        return [{k: getattr(r, k) for k in self.CSV_FIELDS} for r in self.records]

    def write_csv(self, path_or_file):
        def _write(fh):
            writer = csv.DictWriter(fh, fieldnames=self.CSV_FIELDS, lineterminator="\n")
            writer.writeheader()
            for row in self.to_rows():
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

        if hasattr(path_or_file, "write"):
            _write(path_or_file)
        else:
            with open(path_or_file, "w", newline="") as fh:
                _write(fh)


def step_size(t, h0):
    """``h_t = h0 t / (1 + h0 (t - 1))``; rises from ``h0`` towards 1."""
    if t < 1 or not 0 < h0 <= 1:
        raise ValueError("need t >= 1 and 0 < h0 <= 1")
    return h0 * t / (1.0 + h0 * (t - 1))


def injected_noise_scale(sigma_t, h_t, beta):
    """``gamma_t = sigma_t sqrt((1 - beta h_t)^2 - (1 - h_t)^2)``."""
    if not 0 < h_t <= 1 or not 0 < beta <= 1 or sigma_t < 0:
        raise ValueError("need 0 < h_t <= 1, 0 < beta <= 1, sigma_t >= 0")
    # beta <= 1 makes the bracket non-negative; clip round-off at beta == 1
    return sigma_t * math.sqrt(max((1 - beta * h_t) ** 2 - (1 - h_t) ** 2, 0.0))


def estimate_sigma(zhat, z):
    """Noise level implied by a denoiser residual, ``||zhat - z|| / sqrt(N)``."""
    zhat = np.asarray(zhat)
    z = np.asarray(z)
    if zhat.shape != z.shape:
        raise DimensionError(f"shape mismatch {zhat.shape} vs {z.shape}")
    return float(np.linalg.norm((zhat - z).ravel()) / math.sqrt(z.size))


def _jacobi_diagonal(enc, noise, sigma):
    coil_power = np.mean(np.abs(enc.maps) ** 2, axis=(1, 2))[:, None]
    return noise.variance + laplace_factor(sigma) * coil_power


def _solve_residual(enc, noise, sigma, r, cfg, x0=None):
    precond = _jacobi_diagonal(enc, noise, sigma) if cfg.jacobi else None
    return cg_solve(
        sigma_t_operator(noise, enc, sigma), r, tol=cfg.cg_tol, max_iter=cfg.cg_max_iter, x0=x0, preconditioner=precond
    )


def likelihood_gradient(z, sigma, y, encoding, noise, denoiser, cfg=None):
    """Laplace-approximated ``grad log p(y | z)`` at noise level ``sigma``.

    Returns ``-J^T A^H Sigma_t^{-1} (A f(z) - y)`` where ``J`` is the real
    Jacobian of the denoiser at ``z``, together with the CG report.
    """
    cfg = cfg or ImmapConfig()
    zhat, vjp = denoiser.pullback(np.asarray(z, dtype=np.complex128), sigma)
    v, rep = _solve_residual(encoding, noise, sigma, encoding.forward(zhat) - y, cfg)
    return -vjp(encoding.adjoint(v)), rep


def _ascent(denoiser, shape, cfg, likelihood=None, callback=None):
    rng = make_rng(cfg.seed)
    z = draw_complex_gaussian(shape, 1.0, rng)
    sigma = 1.0
    trace = ImmapTrace()
    v_prev = None
    best_z, best_sigma = z, math.inf
    t = 1
    while sigma > cfg.sigma_min:
        if t > cfg.max_outer_iter:
            warnings.warn(
                f"stopped at max_outer_iter={cfg.max_outer_iter} with sigma_t={sigma:.3g}; "
                f"returning the iterate with sigma_t={best_sigma:.3g}",
                RuntimeWarning,
            )
            return best_z, trace
        zhat, vjp = denoiser.pullback(z, sigma)
        sigma = estimate_sigma(zhat, z)
        if not math.isfinite(sigma):
            raise NumericalError(f"non-finite denoiser output at iteration {t}")
        if sigma < best_sigma:
            best_z, best_sigma = z, sigma

        cg_iters, cg_ok, resid = 0, True, float("nan")
        if likelihood is not None:
            enc, y, noise = likelihood
            r = enc.forward(zhat) - y
            resid = float(np.linalg.norm(r))
            v, rep = _solve_residual(enc, noise, sigma, r, cfg, x0=v_prev)
            if not rep.converged:
                warnings.warn(
                    f"CG did not converge at iteration {t} (rel. residual {rep.final_relative_residual:.2e})",
                    RuntimeWarning,
                )
            v_prev = v
            cg_iters, cg_ok = rep.iterations, rep.converged
            u = -vjp(enc.adjoint(v))
            direction = zhat - z + sigma ** 2 * u
        else:
            direction = zhat - z

        h = step_size(t, cfg.h0)
        gamma = injected_noise_scale(sigma, h, cfg.beta)
        eps = draw_complex_gaussian(shape, gamma ** 2, rng)
        prior_step = float(np.linalg.norm(h * (zhat - z)))
        z = z + h * direction + eps
        if not np.all(np.isfinite(z)):
            raise NumericalError(f"non-finite iterate at iteration {t}")
        trace.records.append(IterationRecord(t, sigma, h, gamma, cg_iters, cg_ok, resid, prior_step))
        if callback is not None:
            callback(trace.records[-1], z, zhat)
        t += 1
    trace.converged = True
    return z, trace


def immap_reconstruct(y, maps, mask, noise, denoiser, cfg=None, likelihood_weight=1.0, callback=None):
    """MAP reconstruction of an image from multicoil k-space.

    Parameters
    ----------
    y : ndarray, shape (C, N_s)
        Measured k-space samples.
    maps : ndarray (C, H, W) or EncodingOperator
    mask : SamplingMask or bool ndarray; ignored when ``maps`` is an operator.
    noise : NoiseModel
    denoiser : Denoiser
    cfg : ImmapConfig, optional
    likelihood_weight : {1, 0}
        ``0`` drops the measurements, reducing the loop to :func:`prior_sample`.
    callback : callable, optional
        Called as ``callback(record, z_next, zhat)`` after every iteration.

    Returns
    -------
    image : ndarray (H, W)
    trace : ImmapTrace
    """
    cfg = cfg or ImmapConfig()
    enc = maps if isinstance(maps, EncodingOperator) else EncodingOperator(maps, mask)
    y = np.asarray(y, dtype=np.complex128)
    if y.shape != enc.kspace_shape:
        raise DimensionError(f"k-space shape {y.shape}, expected {enc.kspace_shape}")
    if not isinstance(noise, NoiseModel):
        raise TypeError("noise must be a NoiseModel")
    if likelihood_weight == 0:
        return _ascent(denoiser, enc.image_shape, cfg, callback=callback)
    if likelihood_weight != 1:
        raise ValueError("likelihood_weight must be 0 or 1")
    return _ascent(denoiser, enc.image_shape, cfg, likelihood=(enc, y, noise), callback=callback)


def prior_sample(denoiser, cfg=None, shape=(8, 8), callback=None):
    """Draw from the denoiser's implicit prior by unconditioned ascent."""
    return _ascent(denoiser, tuple(shape), cfg or ImmapConfig(), callback=callback)
