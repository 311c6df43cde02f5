"""Linear operators of the Cartesian multicoil MRI forward model.

The encoding operator ``A`` maps an ``(H, W)`` complex image to ``(C, N_s)``
k-space samples: coil weighting, centered unitary 2D DFT, then a gather of
the kept k-space locations.  The likelihood covariance
``Sigma_t = Sigma_y + sigma_t^2 / (1 + sigma_t^2) * A A^H`` is exposed as a
:class:`LinearOperator` so the CG solver can apply its inverse.
"""

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
import scipy.fft as spfft

from .core import DimensionError, ModelError, hermitian_inner, make_rng, draw_complex_gaussian

__all__ = [
    "fft2c",
    "ifft2c",
    "SamplingMask",
    "NoiseModel",
    "LinearOperator",
    "EncodingOperator",
    "check_sensitivities",
    "laplace_factor",
    "sigma_t_apply",
    "sigma_t_operator",
    "adjoint_check",
]

_AXES = (-2, -1)


def fft2c(img):
    """Centered, unitary 2D DFT over the last two axes.

    Zero frequency lands at index ``n // 2`` along each axis.
    """
    img = np.asarray(img)
    return np.fft.fftshift(
        spfft.fft2(np.fft.ifftshift(img, axes=_AXES), axes=_AXES, norm="ortho"), axes=_AXES
    )


def ifft2c(ksp):
    """Inverse of :func:`fft2c`."""
    ksp = np.asarray(ksp)
    return np.fft.fftshift(
        spfft.ifft2(np.fft.ifftshift(ksp, axes=_AXES), axes=_AXES, norm="ortho"), axes=_AXES
    )


def _centering_signs(shape):
    """Real +-1 modulations with ``fft2c(x) = post * fft2(pre * x)`` for even sizes."""
    h, w = shape
    chk = (-1.0) ** (np.arange(h)[:, None] + np.arange(w)[None, :])
    return chk, chk * (-1.0) ** (h // 2 + w // 2)


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Boolean k-space sampling pattern over an ``(H, W)`` grid.

    Attributes
    ----------
    keep : ndarray of bool, shape (H, W)
        True where the k-space location is acquired.
    """

    keep: np.ndarray

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        if keep.ndim != 2:
            raise DimensionError(f"mask must be 2D, got shape {keep.shape}")
        if not keep.any():
            raise ValueError("mask keeps no samples")
        keep = keep.copy()
        keep.setflags(write=False)
        object.__setattr__(self, "keep", keep)
        idx = np.flatnonzero(keep)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def full(cls, shape):
        return cls(np.ones(shape, dtype=bool))

    @property
    def shape(self):
        return self.keep.shape

    @property
    def n_pixels(self):
        return int(self.keep.size)

    @property
    def n_samples(self):
        return int(self.indices.size)

    @property
    def acceleration(self):
        """Achieved acceleration ``N / N_s``."""
        return self.n_pixels / self.n_samples


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Diagonal measurement-noise covariance ``Sigma_y``.

    ``variance`` holds one strictly positive variance per measurement, shaped
    like the k-space array ``(C, N_s)``.
    """

    variance: np.ndarray

    def __post_init__(self):
        var = np.asarray(self.variance, dtype=np.float64)
        if not np.all(np.isfinite(var)) or np.any(var <= 0):
            raise ModelError("noise variances must be finite and strictly positive")
        var = var.copy()
        var.setflags(write=False)
        object.__setattr__(self, "variance", var)

    @classmethod
    def white(cls, sigma, shape):
        """``Sigma_y = sigma^2 I`` over a k-space array of ``shape``."""
        return cls(np.full(shape, float(sigma) ** 2))

    @classmethod
    def per_coil(cls, sigmas, n_samples):
        sigmas = np.asarray(sigmas, dtype=np.float64)
        return cls(np.repeat((sigmas ** 2)[:, None], n_samples, axis=1))

    @property
    def shape(self):
        return self.variance.shape

    def apply(self, v):
        return self.variance * v

    def solve(self, v):
        return v / self.variance


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """A linear map with an explicit adjoint."""

    forward: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    domain_shape: Tuple[int, ...]
    range_shape: Tuple[int, ...]

    def __call__(self, x):
        return self.forward(x)

    @property
    def domain_dim(self):
        return int(np.prod(self.domain_shape))

    @property
    def range_dim(self):
        return int(np.prod(self.range_shape))

    @classmethod
    def identity(cls, shape):
        shape = tuple(shape)
        return cls(lambda x: x, lambda y: y, shape, shape)

    @classmethod
    def from_matrix(cls, mat):
        mat = np.asarray(mat)
        return cls(
            lambda x: mat @ x,
            lambda y: mat.conj().T @ y,
            (mat.shape[1],),
            (mat.shape[0],),
        )


def check_sensitivities(maps, atol=1e-8):
    """Validate ``(C, H, W)`` coil maps and their sum-of-squares normalization."""
    maps = np.asarray(maps)
    if maps.ndim != 3:
        raise DimensionError(f"sensitivity maps must be (C, H, W), got {maps.shape}")
    sos = np.sum(np.abs(maps) ** 2, axis=0)
    err = float(np.max(np.abs(sos - 1.0)))
    if err > atol:
        raise ModelError(f"sensitivity maps not sum-of-squares normalized (max error {err:.2e})")
    return maps


class EncodingOperator:
    """Multicoil Cartesian encoding ``A x = [I_Omega F (s_c * x)]_c``.

    Parameters
    ----------
    maps : ndarray, shape (C, H, W)
        Coil sensitivities.  Normalization is not enforced here so that
        whitened or scaled operators can be built; use
        :func:`check_sensitivities` to validate raw maps.
    mask : SamplingMask
    weights : ndarray, shape (C, N_s), optional
        Per-sample real weights applied after sampling (``Sigma_y^{-1/2}``
        for a whitened operator).
    """

    def __init__(self, maps, mask, weights=None):
        maps = np.asarray(maps, dtype=np.complex128)
        if maps.ndim != 3:
            raise DimensionError(f"sensitivity maps must be (C, H, W), got {maps.shape}")
        if not isinstance(mask, SamplingMask):
            mask = SamplingMask(mask)
        if maps.shape[1:] != mask.shape:
            raise DimensionError(f"maps {maps.shape[1:]} and mask {mask.shape} disagree")
        self.maps = maps
        self.mask = mask
        self.image_shape = mask.shape
        self.kspace_shape = (maps.shape[0], mask.n_samples)
        if weights is not None:
            weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), self.kspace_shape)
        self.weights = weights
        # even sizes: fold the fft shifts into the coil maps and a per-sample sign
        h, w = self.image_shape
        if h % 2 == 0 and w % 2 == 0:
            pre, post = _centering_signs(self.image_shape)
            self._maps_pre = maps * pre
            self._post = post.ravel()[mask.indices]
        else:
            self._maps_pre = None

    @property
    def n_coils(self):
        return self.maps.shape[0]

    @property
    def domain_shape(self):
        return self.image_shape

    @property
    def range_shape(self):
        return self.kspace_shape

    def _check(self, arr, shape, what):
        arr = np.asarray(arr)
        if arr.shape != shape:
            raise DimensionError(f"{what} has shape {arr.shape}, expected {shape}")
        return arr

    def forward(self, x):
        x = self._check(x, self.image_shape, "image")
        if self._maps_pre is not None:
            ksp = spfft.fft2(self._maps_pre * x, norm="ortho").reshape(self.n_coils, -1)
            y = ksp[:, self.mask.indices] * self._post
        else:
            ksp = fft2c(self.maps * x).reshape(self.n_coils, -1)
            y = ksp[:, self.mask.indices]
        if self.weights is not None:
            y = y * self.weights
        return y

    def adjoint(self, y):
        y = self._check(y, self.kspace_shape, "k-space")
        if self.weights is not None:
            y = y * self.weights
        full = np.zeros((self.n_coils, self.mask.n_pixels), dtype=np.complex128)
        if self._maps_pre is not None:
            full[:, self.mask.indices] = y * self._post
            coil_imgs = spfft.ifft2(full.reshape(self.n_coils, *self.image_shape), norm="ortho")
            return np.sum(self._maps_pre.conj() * coil_imgs, axis=0)
        full[:, self.mask.indices] = y
        coil_imgs = ifft2c(full.reshape(self.n_coils, *self.image_shape))
        return np.sum(self.maps.conj() * coil_imgs, axis=0)

    def normal(self, x):
        """``A^H A x``."""
        return self.adjoint(self.forward(x))

    def gram(self, y):
        """``A A^H y``."""
        return self.forward(self.adjoint(y))

    def whitened(self, noise):
        """Operator ``Sigma_y^{-1/2} A`` for a diagonal noise model."""
        w = 1.0 / np.sqrt(noise.variance)
        if self.weights is not None:
            w = w * self.weights
        return EncodingOperator(self.maps, self.mask, weights=w)

    def as_linear_operator(self):
        return LinearOperator(self.forward, self.adjoint, self.image_shape, self.kspace_shape)

    def dense(self):
        """Explicit matrix of ``A`` (tests only; small images)."""
        n = self.mask.n_pixels
        if n > 64 * 64:
            raise ValueError("dense encoding matrix only supported for N <= 64*64")
        cols = []
        for j in range(n):
            e = np.zeros(n, dtype=np.complex128)
            e[j] = 1.0
            cols.append(self.forward(e.reshape(self.image_shape)).ravel())
        return np.stack(cols, axis=1)


def laplace_factor(sigma_t):
    """Laplace-approximation variance ``sigma_t^2 / (1 + sigma_t^2)``."""
    s2 = float(sigma_t) ** 2
    return s2 / (1.0 + s2)


def sigma_t_apply(v, noise, encoding, sigma_t):
    """Apply ``Sigma_t = Sigma_y + sigma_t^2/(1+sigma_t^2) A A^H`` to ``v``."""
    if sigma_t < 0:
        raise ValueError("sigma_t must be non-negative")
    out = noise.apply(v)
    c = laplace_factor(sigma_t)
    if c != 0.0:
        out = out + c * encoding.gram(v)
    return out


def sigma_t_operator(noise, encoding, sigma_t):
    if noise.shape != encoding.kspace_shape:
        raise DimensionError(f"noise model {noise.shape} vs k-space {encoding.kspace_shape}")

    def apply(v):
        return sigma_t_apply(v, noise, encoding, sigma_t)

    return LinearOperator(apply, apply, encoding.kspace_shape, encoding.kspace_shape)


def adjoint_check(op, rng=0):
    """Relative discrepancy of the adjoint identity on seeded random vectors.

    Returns ``|<Ax, y> - <x, A^H y>| / (||Ax|| ||y|| + ||x|| ||A^H y||)``.
    """
    rng = make_rng(rng)
    x = draw_complex_gaussian(op.domain_shape, 1.0, rng)
    y = draw_complex_gaussian(op.range_shape, 1.0, rng)
    ax = op.forward(x)
    ahy = op.adjoint(y)
    lhs = hermitian_inner(ax, y)
    rhs = hermitian_inner(x, ahy)
    scale = np.linalg.norm(ax) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(ahy)
    if scale == 0:
        return 0.0
    return float(abs(lhs - rhs) / scale)
