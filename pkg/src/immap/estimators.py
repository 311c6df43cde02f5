"""Estimator-style wrappers over the functional reconstruction API.

Each reconstructor is configured through constructor keywords (exposed by
``get_params``/``set_params``) and ``fit`` takes one acquisition::

    rec = ImmapReconstructor(seed=3).fit(y, maps=maps, mask=mask, noise=0.05)
    rec.image_, rec.trace_, rec.n_iter_
"""

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_kspace, check_maps, check_mask, check_noise
from .baselines import cg_sense, zero_filled_recon
from .denoisers import WaveletDenoiser
from .operators import EncodingOperator, NoiseModel
from .solver import ImmapConfig, immap_reconstruct, prior_sample

__all__ = [
    "normalization_scale",
    "ImmapReconstructor",
    "SenseReconstructor",
    "ZeroFilledReconstructor",
    "PriorSampler",
]

NORMALIZATION_MODES = ("p99", "none")


def normalization_scale(y, encoding, mode="p99"):
    """Factor that brings the zero-filled image to unit 99th-percentile magnitude.

    The solver starts from ``CN(0, I)`` at noise level 1, which presumes
    roughly unit-scale images.  ``mode="none"`` returns 1.
    """
    if mode == "none":
        return 1.0
    if mode != "p99":
        raise ValueError(f"unknown normalization {mode!r}; choose from {NORMALIZATION_MODES}")
    p99 = float(np.percentile(np.abs(encoding.adjoint(y)), 99))
    return 1.0 / p99 if p99 > 0 else 1.0


class _Reconstructor(BaseEstimator):
    def _prepare(self, y, maps, mask, noise):
        maps = check_maps(maps)
        enc = EncodingOperator(maps, check_mask(mask, maps.shape[1:]))
        y = check_kspace(y, enc.kspace_shape)
        noise = None if noise is None else check_noise(noise, enc.kspace_shape)
        scale = normalization_scale(y, enc, getattr(self, "normalize", "none"))
        if noise is not None and scale != 1.0:
            noise = NoiseModel(noise.variance * scale ** 2)
        self.scale_ = scale
        return enc, y * scale, noise


class ZeroFilledReconstructor(_Reconstructor):
    """Adjoint reconstruction ``A^H y``."""

    def fit(self, y, maps, mask, noise=None):
        enc, y, _ = self._prepare(y, maps, mask, None)
        self.image_ = zero_filled_recon(y, enc) / self.scale_
        return self


class SenseReconstructor(_Reconstructor):
    """Tikhonov-regularized CG-SENSE.

    ``lam`` is applied after normalization, so it is in units of the
    normalized data.
    """

    def __init__(self, lam=1e-2, tol=1e-6, max_iter=200, normalize="p99"):
        self.lam = lam
        self.tol = tol
        self.max_iter = max_iter
        self.normalize = normalize

    def fit(self, y, maps, mask, noise=None):
        enc, y, noise = self._prepare(y, maps, mask, noise)
        x = cg_sense(y, enc, noise=noise, lam=self.lam, tol=self.tol, max_iter=self.max_iter)
        self.image_ = x / self.scale_
        return self


class _AscentParams:
    def solver_config(self):
        return ImmapConfig(
            beta=self.beta,
            sigma_min=self.sigma_min,
            h0=self.h0,
            cg_tol=self.cg_tol,
            cg_max_iter=self.cg_max_iter,
            max_outer_iter=self.max_outer_iter,
            seed=self.seed,
            jacobi=self.jacobi,
        )

    def _denoiser(self):
        return WaveletDenoiser() if self.denoiser is None else self.denoiser


class ImmapReconstructor(_AscentParams, _Reconstructor):
    """Stochastic MAP ascent with a denoiser prior.

    Parameters
    ----------
    denoiser : Denoiser, optional
        Defaults to ``WaveletDenoiser()``.
    beta, sigma_min, h0, cg_tol, cg_max_iter, max_outer_iter, seed, jacobi
        See :class:`ImmapConfig`.
    normalize : {"p99", "none"}

    Attributes
    ----------
    image_ : ndarray (H, W)
    trace_ : ImmapTrace
    n_iter_ : int
    converged_ : bool
    scale_ : float
        Normalization factor applied to the data (and undone on ``image_``).
    """

    def __init__(
        self,
        denoiser=None,
        beta=0.05,
        sigma_min=0.01,
        h0=0.01,
        cg_tol=1e-6,
        cg_max_iter=100,
        max_outer_iter=1000,
        seed=0,
        jacobi=False,
        normalize="p99",
    ):
        self.denoiser = denoiser
        self.beta = beta
        self.sigma_min = sigma_min
        self.h0 = h0
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter
        self.max_outer_iter = max_outer_iter
        self.seed = seed
        self.jacobi = jacobi
        self.normalize = normalize

    def fit(self, y, maps, mask, noise):
        """``noise`` is a NoiseModel, a scalar standard deviation or a variance array."""
        enc, y, noise = self._prepare(y, maps, mask, noise)
        z, trace = immap_reconstruct(y, enc, None, noise, self._denoiser(), self.solver_config())
        self.image_ = z / self.scale_
        self.trace_ = trace
        self.n_iter_ = len(trace)
        self.converged_ = trace.converged
        return self


class PriorSampler(_AscentParams, BaseEstimator):
    """Unconditioned coarse-to-fine ascent; ``fit`` draws one sample."""

    def __init__(
        self,
        denoiser=None,
        shape=(64, 64),
        beta=0.05,
        sigma_min=0.01,
        h0=0.01,
        max_outer_iter=1000,
        seed=0,
    ):
        self.denoiser = denoiser
        self.shape = shape
        self.beta = beta
        self.sigma_min = sigma_min
        self.h0 = h0
        self.max_outer_iter = max_outer_iter
        self.seed = seed

    cg_tol = 1e-6
    cg_max_iter = 100
    jacobi = False

    def fit(self, X=None, y=None):
        z, trace = prior_sample(self._denoiser(), self.solver_config(), tuple(self.shape))
        self.sample_ = z
        self.trace_ = trace
        self.n_iter_ = len(trace)
        self.converged_ = trace.converged
        return self
