"""Denoisers acting as implicit priors, each with a vector-Jacobian product.

Jacobians are taken in real coordinates (C^N viewed as R^2N).  ``vjp(z, sigma,
v)`` returns the transpose of that real Jacobian applied to ``v``, packed back
into a complex array.  For holomorphic maps this coincides with ``J^H v``.

Noise levels follow the circular complex convention: ``sigma^2`` is the total
variance per complex pixel, split evenly between real and imaginary parts.
"""

import warnings

import numpy as np
from sklearn.base import BaseEstimator

from .core import DimensionError, real_inner
from .wavelets import detail_mask, haar_dwt2, haar_idwt2

__all__ = [
    "Denoiser",
    "IdentityDenoiser",
    "GaussianDenoiser",
    "WaveletDenoiser",
    "GMMDenoiser",
    "FunctionDenoiser",
    "soft_threshold",
    "finite_diff_vjp",
    "directional_derivative",
    "make_denoiser",
]


class Denoiser(BaseEstimator):
    """Base class: subclasses implement ``denoise`` and ``vjp``."""

    name = "base"

    def denoise(self, z, sigma):
        raise NotImplementedError

    def vjp(self, z, sigma, v):
        raise NotImplementedError

    def pullback(self, z, sigma):
        """Return ``(f(z; sigma), v -> J^T v)`` evaluated at ``z``."""
        zhat = self.denoise(z, sigma)
        return zhat, lambda v: self.vjp(z, sigma, v)

    def __call__(self, z, sigma):
        return self.denoise(z, sigma)


class IdentityDenoiser(Denoiser):
    name = "identity"

    def denoise(self, z, sigma):
        return np.array(z, dtype=np.complex128)

    def vjp(self, z, sigma, v):
        return np.array(v, dtype=np.complex128)


class GaussianDenoiser(Denoiser):
    """Posterior mean under an isotropic Gaussian prior ``CN(mean, variance I)``.

    ``f(z) = mean + variance / (variance + sigma^2) * (z - mean)``, which makes
    Tweedie's identity exact.
    """

    name = "gaussian"

    def __init__(self, mean=0.0, variance=1.0):
        self.mean = mean
        self.variance = variance

    def _shrink(self, sigma):
        if not self.variance > 0:
            raise ValueError("prior variance must be positive")
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        return self.variance / (self.variance + sigma ** 2)

    def denoise(self, z, sigma):
        k = self._shrink(sigma)
        mu = np.asarray(self.mean)
        return mu + k * (np.asarray(z) - mu)

    def vjp(self, z, sigma, v):
        return self._shrink(sigma) * np.asarray(v, dtype=np.complex128)

    def score(self, z, sigma):
        """Exact score of the noisy marginal ``CN(mean, (variance + sigma^2) I)``.

        Uses the derivative ``d/d conj(z)``, the gradient for which
        ``f(z) - z = sigma^2 * score`` holds.
        """
        return -(np.asarray(z) - np.asarray(self.mean)) / (self.variance + sigma ** 2)


def soft_threshold(a, tau):
    """Soft-thresholding of a real array."""
    return np.sign(a) * np.maximum(np.abs(a) - tau, 0.0)


def _soft(w, tau):
    return soft_threshold(w, tau), (np.abs(w) > tau).astype(np.float64)


def _garrote(w, tau):
    # non-negative garrote: w - tau^2 / w outside the dead zone
    big = np.abs(w) > tau
    safe = np.where(big, w, 1.0)
    return np.where(big, w - tau * tau / safe, 0.0), np.where(big, 1.0 + tau * tau / safe ** 2, 0.0)


_SHRINKAGE = {"soft": _soft, "garrote": _garrote}


class WaveletDenoiser(Denoiser):
    """Haar-domain shrinkage with a noise-adaptive threshold.

    Detail coefficients are shrunk part-wise (real and imaginary separately)
    with threshold ``tau = lam * sigma ** threshold_power``; the approximation
    band passes through.  With ``shifts > 1`` the estimate is averaged over
    ``shifts x shifts`` circular translations (cycle spinning).

    At the dead-zone edge ``|coefficient| == tau`` the derivative takes the
    zero branch.

    Parameters
    ----------
    lam : float
        Threshold scale.
    levels : int
        Haar levels; image sides must be divisible by ``2**levels``.
    threshold_power : {1, 2}
        ``1`` ties the threshold to the noise standard deviation, ``2`` is the
        MAP threshold of a Laplacian coefficient prior with rate ``lam``.
    shrinkage : {"garrote", "soft"}
    shifts : int
        Cycle-spinning translations per axis; ``1`` is a single orthonormal
        transform.

    Notes
    -----
    The defaults are the setting used for phantom reconstructions.  The plain
    orthonormal soft-threshold variant is
    ``WaveletDenoiser(lam=2.0, threshold_power=2, shrinkage="soft", shifts=1)``.
    """

    name = "wavelet"

    def __init__(self, lam=1.5, levels=4, threshold_power=1, shrinkage="garrote", shifts=4):
        self.lam = lam
        self.levels = levels
        self.threshold_power = threshold_power
        self.shrinkage = shrinkage
        self.shifts = shifts

    def threshold(self, sigma):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        return self.lam * sigma ** self.threshold_power

    def _offsets(self):
        if self.shifts < 1:
            raise ValueError("shifts must be >= 1")
        return [(a, b) for a in range(self.shifts) for b in range(self.shifts)]

    def pullback(self, z, sigma):
        z = np.asarray(z)
        if z.ndim != 2:
            raise DimensionError(f"wavelet denoiser expects a 2D image, got {z.shape}")
        try:
            shrink = _SHRINKAGE[self.shrinkage]
        except KeyError:
            raise ValueError(f"unknown shrinkage {self.shrinkage!r}") from None
        levels = self.levels
        detail = detail_mask(z.shape, levels)
        tau = self.threshold(sigma)
        offsets = self._offsets()
        out = np.zeros(z.shape, dtype=np.complex128)
        slopes = []
        for a, b in offsets:
            coef = haar_dwt2(np.roll(z, (a, b), axis=(0, 1)), levels)
            f_re, d_re = shrink(coef.real, tau)
            f_im, d_im = shrink(coef.imag, tau)
            shrunk = np.where(detail, f_re, coef.real) + 1j * np.where(detail, f_im, coef.imag)
            out += np.roll(haar_idwt2(shrunk, levels), (-a, -b), axis=(0, 1))
            slopes.append((a, b, np.where(detail, d_re, 1.0), np.where(detail, d_im, 1.0)))
        out /= len(offsets)

        def vjp(v):
            v = np.asarray(v, dtype=np.complex128)
            acc = np.zeros(v.shape, dtype=np.complex128)
            for a, b, d_re, d_im in slopes:
                cv = haar_dwt2(np.roll(v, (a, b), axis=(0, 1)), levels)
                acc += np.roll(haar_idwt2(d_re * cv.real + 1j * (d_im * cv.imag), levels), (-a, -b), axis=(0, 1))
            return acc / len(slopes)

        return out, vjp

    def denoise(self, z, sigma):
        return self.pullback(z, sigma)[0]

    def vjp(self, z, sigma, v):
        return self.pullback(z, sigma)[1](v)


class GMMDenoiser(Denoiser):
    """Posterior mean under an isotropic Gaussian-mixture prior.

    Component ``k`` is ``CN(means[k], variances[k] I)`` with weight
    ``weights[k]``.  Intended for toy dimensions; the closed-form Jacobian
    combines responsibility-weighted shrinkage with the gradient of the
    responsibilities.
    """

    name = "gmm"

    def __init__(self, weights=(1.0,), means=(0.0,), variances=(1.0,)):
        self.weights = weights
        self.means = means
        self.variances = variances

    def _params(self, shape):
        w = np.asarray(self.weights, dtype=np.float64)
        c = np.asarray(self.variances, dtype=np.float64)
        if w.ndim != 1 or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("mixture weights must be positive and sum to 1")
        if c.shape != w.shape or np.any(c <= 0):
            raise ValueError("component variances must be positive, one per component")
        mu = np.asarray(self.means, dtype=np.complex128)
        if mu.ndim == 0 or mu.shape[0] != len(w):
            raise ValueError("need one mean per mixture component")
        # per-component scalars or arrays, right-aligned against the image shape
        lead = (1,) * (len(shape) - (mu.ndim - 1))
        mu = np.broadcast_to(mu.reshape(len(w), *lead, *mu.shape[1:]), (len(w), *shape))
        return w, mu, c

    def _posterior(self, z, sigma):
        z = np.asarray(z, dtype=np.complex128)
        w, mu, c = self._params(z.shape)
        s2 = sigma ** 2
        axes = tuple(range(1, mu.ndim))
        diff = z[None] - mu
        var = c + s2
        d = z.size
        logr = np.log(w) - np.sum(np.abs(diff) ** 2, axis=axes) / var - d * np.log(var)
        logr -= logr.max()
        r = np.exp(logr)
        r /= r.sum()
        shape = (-1,) + (1,) * z.ndim
        shrink = (c / var).reshape(shape)
        m = mu + shrink * diff
        return z, r, m, diff, var.reshape(shape), shrink

    def denoise(self, z, sigma):
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        _, r, m, _, _, _ = self._posterior(z, sigma)
        return np.tensordot(r, m, axes=1)

    def responsibilities(self, z, sigma):
        return self._posterior(z, sigma)[1]

    def vjp(self, z, sigma, v):
        z, r, m, diff, var, shrink = self._posterior(z, sigma)
        v = np.asarray(v, dtype=np.complex128)
        # grad of log unnormalized responsibility, as a complex-packed real vector
        g = -2.0 * diff / var
        gbar = np.tensordot(r, g, axes=1)
        mv = np.array([real_inner(mk, v) for mk in m])
        out = np.sum(r * shrink.ravel()) * v
        out = out + np.tensordot(r * mv, g - gbar[None], axes=1)
        return out


class FunctionDenoiser(Denoiser):
    """Wrap a plain callable ``fn(z, sigma)`` as a denoiser.

    Without ``vjp_fn`` the VJP falls back to :func:`finite_diff_vjp`, which
    costs ``4N`` denoiser calls per product and is meant for tests only.
    """

    name = "function"

    def __init__(self, fn=None, vjp_fn=None, eps=1e-6):
        self.fn = fn
        self.vjp_fn = vjp_fn
        self.eps = eps

    def denoise(self, z, sigma):
        return np.asarray(self.fn(z, sigma))

    def vjp(self, z, sigma, v):
        if self.vjp_fn is not None:
            return self.vjp_fn(z, sigma, v)
        warnings.warn("finite-difference VJP fallback is O(N) denoiser calls", RuntimeWarning, stacklevel=2)
        return finite_diff_vjp(self, z, sigma, v, self.eps)


def directional_derivative(denoiser, z, sigma, u, eps=1e-4):
    """Central difference ``(f(z + eps u) - f(z - eps u)) / (2 eps)``."""
    z = np.asarray(z, dtype=np.complex128)
    return (denoiser.denoise(z + eps * u, sigma) - denoiser.denoise(z - eps * u, sigma)) / (2 * eps)


def finite_diff_vjp(denoiser, z, sigma, v, eps=1e-4):
    """Assemble ``J^T v`` coordinate by coordinate from central differences.

    Probes all 2N real directions, so only suitable for small images.
    """
    z = np.asarray(z, dtype=np.complex128)
    v = np.asarray(v, dtype=np.complex128)
    out = np.zeros(z.shape, dtype=np.complex128)
    flat = out.reshape(-1)
    for j in range(z.size):
        for unit in (1.0, 1j):
            u = np.zeros(z.size, dtype=np.complex128)
            u[j] = unit
            df = directional_derivative(denoiser, z, sigma, u.reshape(z.shape), eps)
            flat[j] += unit * real_inner(v, df)
    return out


_REGISTRY = {
    "identity": IdentityDenoiser,
    "gaussian": GaussianDenoiser,
    "wavelet": WaveletDenoiser,
    "gmm": GMMDenoiser,
}


def make_denoiser(name, **params):
    """Instantiate a registered denoiser by name."""
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown denoiser {name!r}; choose from {sorted(_REGISTRY)}") from None
    return cls(**params)
