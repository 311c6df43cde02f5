"""Simulated Cartesian multicoil acquisitions.

Shepp-Logan phantom, smooth synthetic coil sensitivities, line-wise
undersampling masks with a fully sampled center, k-space noise, wavelet-based
noise estimation and whitening.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .core import DimensionError, ModelError, draw_complex_gaussian, make_rng
from .operators import EncodingOperator, NoiseModel, SamplingMask
from .wavelets import finest_diagonal

__all__ = [
    "SHEPP_LOGAN_ELLIPSES",
    "AcquisitionSpec",
    "shepp_logan",
    "synth_sensitivities",
    "cartesian_mask",
    "default_acs_lines",
    "simulate_acquisition",
    "estimate_noise_cov",
    "estimate_noise_sigma",
    "whiten",
]

# intensity, semi-axis a (x), semi-axis b (y), center x, center y, rotation (deg)
# Toft's modified Shepp-Logan, intensities within [0, 1]
SHEPP_LOGAN_ELLIPSES = np.array(
    [
        [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0],
        [-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0],
        [-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0],
        [0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0],
        [0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0],
        [0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0],
        [0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0],
        [0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0],
        [0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0],
    ]
)


@dataclass(frozen=True)
class AcquisitionSpec:
    size: int = 128
    coils: int = 8
    accel: float = 4.0
    acs_lines: int = None
    scheme: str = "uniform"
    noise_sigma: float = 0.05
    seed: int = 0
    phase: bool = False

    def __post_init__(self):
        if self.accel < 1:
            raise ValueError("acceleration must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.coils < 1:
            raise ValueError("need at least one coil")
        if self.scheme not in ("uniform", "random-lines"):
            raise ValueError(f"unknown mask scheme {self.scheme!r}")
        if self.acs_lines is not None and not 0 <= self.acs_lines <= self.size:
            raise ValueError("ACS lines must lie in [0, size]")

    def to_dict(self):
        return asdict(self)


def pixel_grid(size):
    """Pixel-center coordinates on [-1, 1]; ``y`` points up (row 0 is the top)."""
    c = (np.arange(size) + 0.5) * (2.0 / size) - 1.0
    x = np.broadcast_to(c[None, :], (size, size))
    y = np.broadcast_to(-c[:, None], (size, size))
    return x, y


def shepp_logan(size, phase=False):
    """Modified Shepp-Logan phantom as a complex ``(size, size)`` image.

    With ``phase=True`` the magnitude is modulated by a smooth quadratic phase.
    """
    if size < 32:
        raise ValueError("phantom size must be at least 32")
    x, y = pixel_grid(size)
    img = np.zeros((size, size))
    for amp, a, b, x0, y0, deg in SHEPP_LOGAN_ELLIPSES:
        th = np.deg2rad(deg)
        xr = (x - x0) * np.cos(th) + (y - y0) * np.sin(th)
        yr = -(x - x0) * np.sin(th) + (y - y0) * np.cos(th)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += amp
    img = np.clip(img, 0.0, 1.0)
    out = img.astype(np.complex128)
    if phase:
        out = out * np.exp(1j * (0.6 * x + 0.4 * y + 0.5 * x * y))
    return out


def synth_sensitivities(size, coils, seed=0):
    """Smooth complex coil maps, sum-of-squares normalized.

    Gaussian magnitude bumps centered on a ring of radius 1.2 around the field
    of view, each with a random linear phase drawn from ``seed``.
    """
    if coils < 1:
        raise ValueError("need at least one coil")
    if coils == 1:
        return np.ones((1, size, size), dtype=np.complex128)
    rng = make_rng(seed)
    x, y = pixel_grid(size)
    maps = np.empty((coils, size, size), dtype=np.complex128)
    offset = rng.uniform(0, 2 * np.pi)
    for c in range(coils):
        ang = offset + 2 * np.pi * c / coils
        cx, cy = 1.2 * np.cos(ang), 1.2 * np.sin(ang)
        mag = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * 0.8 ** 2))
        kx, ky, ph0 = rng.uniform(-1.0, 1.0, size=3)
        maps[c] = mag * np.exp(1j * (np.pi * ph0 + kx * x + ky * y))
    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / sos


def default_acs_lines(lines):
    """ACS block of 6% of the lines, rounded."""
    return int(round(0.06 * lines))


def cartesian_mask(size, accel, acs_lines=None, scheme="uniform", seed=0):
    """Keep whole k-space rows (phase-encode lines); readout fully sampled.

    The total number of kept rows is ``round(lines / accel)``, including a
    centered ACS block.  ``size`` is an int (square) or ``(H, W)``.
    """
    if np.isscalar(size):
        size = (int(size), int(size))
    lines, width = size
    if accel < 1:
        raise ValueError("acceleration must be >= 1")
    if acs_lines is None:
        acs_lines = default_acs_lines(lines)
    budget = int(round(lines / accel))
    if budget < 1:
        raise ValueError(f"acceleration {accel} leaves no lines out of {lines}")
    if acs_lines > budget:
        raise ValueError(f"ACS block ({acs_lines}) exceeds line budget ({budget})")
    keep_rows = np.zeros(lines, dtype=bool)
    start = lines // 2 - acs_lines // 2
    keep_rows[start : start + acs_lines] = True
    free = np.flatnonzero(~keep_rows)
    extra = budget - acs_lines
    if extra > 0:
        if scheme == "uniform":
            pick = free[np.round(np.linspace(0, free.size - 1, extra)).astype(int)]
        elif scheme == "random-lines":
            pick = make_rng(seed).choice(free, size=extra, replace=False)
        else:
            raise ValueError(f"unknown mask scheme {scheme!r}")
        keep_rows[pick] = True
    keep = np.repeat(keep_rows[:, None], width, axis=1)
    return SamplingMask(keep)


def simulate_acquisition(x, maps, mask, sigma, rng):
    """``y = A x + nu`` with ``nu ~ CN(0, sigma^2 I)`` per k-space sample."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    enc = EncodingOperator(maps, mask)
    y = enc.forward(x)
    if sigma > 0:
        y = y + draw_complex_gaussian(y.shape, sigma ** 2, make_rng(rng))
    return y


def estimate_noise_sigma(img):
    """Robust complex noise level of one image from its finest diagonal Haar band.

    ``median(|w|) / 0.6745`` is applied to real and imaginary parts
    separately; the per-part standard deviations are pooled into a complex
    noise level ``sqrt(s_re^2 + s_im^2)``.
    """
    img = np.asarray(img)
    if img.shape[-1] % 2 or img.shape[-2] % 2:
        raise DimensionError("image dimensions must be even")
    hh = finest_diagonal(img)
    s_re = np.median(np.abs(hh.real)) / 0.6745
    s_im = np.median(np.abs(hh.imag)) / 0.6745
    return float(np.sqrt(s_re ** 2 + s_im ** 2))


def estimate_noise_cov(coil_images, n_samples=None, scale=1.0):
    """Per-coil diagonal noise covariance from coil images.

    Parameters
    ----------
    coil_images : ndarray, shape (C, H, W)
    n_samples : int, optional
        Samples per coil in the returned covariance; defaults to ``H * W``.
    scale : float
        Multiplies each estimated standard deviation, e.g. ``sqrt(R)`` when the
        coil images are zero-filled from data undersampled by ``R``.

    Returns
    -------
    NoiseModel or None
        ``None`` when any coil gives a zero estimate (constant input).
    """
    coil_images = np.asarray(coil_images)
    if coil_images.ndim == 2:
        coil_images = coil_images[None]
    sig = np.array([estimate_noise_sigma(im) for im in coil_images]) * scale
    if n_samples is None:
        n_samples = coil_images.shape[-1] * coil_images.shape[-2]
    if np.any(sig <= 0):
        return None
    return NoiseModel.per_coil(sig, n_samples)


def whiten(y, noise):
    """Return ``(Sigma_y^{-1/2} y, unit-variance NoiseModel)``.

    Pair the result with ``EncodingOperator.whitened(noise)``.
    """
    y = np.asarray(y)
    if y.shape != noise.shape:
        raise DimensionError(f"k-space {y.shape} vs noise model {noise.shape}")
    if np.any(noise.variance <= 0):
        raise ModelError("zero noise variance cannot be whitened")
    return y / np.sqrt(noise.variance), NoiseModel(np.ones(noise.shape))
