"""Image-quality metrics on magnitude images."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import DimensionError

__all__ = ["MetricReport", "nrmse", "psnr", "ssim", "evaluate"]


def _pair(ref, est):
    ref = np.asarray(ref)
    est = np.asarray(est)
    if ref.shape != est.shape:
        raise DimensionError(f"shape mismatch {ref.shape} vs {est.shape}")
    return ref, est


def _align_phase(ref, est):
    # global phase minimizing ||ref - e^{i phi} est||
    ip = np.vdot(est.ravel(), ref.ravel())
    return est * (ip / abs(ip)) if ip != 0 else est


def nrmse(ref, est, complex_valued=False):
    """``||est - ref|| / ||ref||`` on magnitudes, or on phase-aligned complex data."""
    ref, est = _pair(ref, est)
    if complex_valued:
        a, b = ref, _align_phase(ref, est)
    else:
        a, b = np.abs(ref), np.abs(est)
    denom = np.linalg.norm(a)
    if denom == 0:
        raise ValueError("reference image is identically zero")
    return float(np.linalg.norm(b - a) / denom)


def psnr(ref, est):
    """``20 log10(max|ref| / rmse)`` in dB on magnitudes."""
    ref, est = _pair(ref, est)
    a, b = np.abs(ref), np.abs(est)
    peak = a.max()
    if peak == 0:
        raise ValueError("reference image is identically zero")
    rmse = np.sqrt(np.mean((a - b) ** 2))
    if rmse == 0:
        return float("inf")
    return float(20 * np.log10(peak / rmse))


def ssim(ref, est, sigma=1.5, win_size=11, k1=0.01, k2=0.03):
    """Mean SSIM of magnitude images scaled by ``max|ref|``.

    Gaussian-weighted local statistics (window ``win_size``, std ``sigma``),
    data range 1, population covariances.
    """
    ref, est = _pair(ref, est)
    peak = np.abs(ref).max()
    if peak == 0:
        raise ValueError("reference image is identically zero")
    a = np.abs(ref) / peak
    b = np.abs(est) / peak
    trunc = ((win_size - 1) / 2) / sigma

    def filt(img):
        return gaussian_filter(img, sigma=sigma, truncate=trunc, mode="reflect")

    mu_a, mu_b = filt(a), filt(b)
    vaa = filt(a * a) - mu_a ** 2
    vbb = filt(b * b) - mu_b ** 2
    vab = filt(a * b) - mu_a * mu_b
    c1, c2 = k1 ** 2, k2 ** 2
    smap = ((2 * mu_a * mu_b + c1) * (2 * vab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (vaa + vbb + c2))
    pad = (win_size - 1) // 2
    return float(smap[pad:-pad, pad:-pad].mean())


@dataclass
class MetricReport:
    nrmse: float
    psnr: float
    ssim: float

    @property
    def ssim100(self):
        return 100.0 * self.ssim

    def to_dict(self):
        d = asdict(self)
        d["ssim100"] = self.ssim100
        return d


def evaluate(ref, est):
    return MetricReport(nrmse(ref, est), psnr(ref, est), ssim(ref, est))
