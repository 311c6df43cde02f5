"""Orthonormal multi-level 2D Haar transform in Mallat layout.

Coefficients are stored in an array the size of the image: after ``levels``
steps the approximation band occupies the top-left ``H/2^L x W/2^L`` block and
detail bands fill the rest.  The transform is real-linear, so complex images
are transformed part-wise.
"""

import numpy as np

from .core import DimensionError

__all__ = ["haar_dwt2", "haar_idwt2", "detail_mask", "finest_diagonal"]


def _check(shape, levels):
    if levels < 0:
        raise ValueError("levels must be non-negative")
    h, w = shape[-2:]
    div = 2 ** levels
    if h % div or w % div:
        raise DimensionError(f"image shape {(h, w)} not divisible by 2**{levels}")


def _step(x):
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) / 2
    lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2
    hh = (a - b - c + d) / 2
    top = np.concatenate([ll, lh], axis=-1)
    bottom = np.concatenate([hl, hh], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def _istep(coef):
    h, w = coef.shape[-2] // 2, coef.shape[-1] // 2
    ll = coef[..., :h, :w]
    lh = coef[..., :h, w:]
    hl = coef[..., h:, :w]
    hh = coef[..., h:, w:]
    out = np.empty_like(coef)
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[..., 0::2, 1::2] = (ll - lh + hl - hh) / 2
    out[..., 1::2, 0::2] = (ll + lh - hl - hh) / 2
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) / 2
    return out


def haar_dwt2(img, levels):
    """Forward transform over the last two axes."""
    img = np.asarray(img)
    _check(img.shape, levels)
    coef = np.array(img, dtype=np.result_type(img, np.float64), copy=True)
    h, w = coef.shape[-2:]
    for _ in range(levels):
        coef[..., :h, :w] = _step(coef[..., :h, :w])
        h //= 2
        w //= 2
    return coef


def haar_idwt2(coef, levels):
    """Inverse of :func:`haar_dwt2`."""
    coef = np.asarray(coef)
    _check(coef.shape, levels)
    img = np.array(coef, dtype=np.result_type(coef, np.float64), copy=True)
    H, W = img.shape[-2:]
    for lev in reversed(range(levels)):
        h, w = H >> lev, W >> lev
        img[..., :h, :w] = _istep(img[..., :h, :w])
    return img


def detail_mask(shape, levels):
    """Boolean array, True on detail coefficients and False on the approximation band."""
    _check(shape, levels)
    mask = np.ones(shape[-2:], dtype=bool)
    mask[: shape[-2] >> levels, : shape[-1] >> levels] = False
    return mask


def finest_diagonal(img):
    """Diagonal (HH) detail band of a single-level transform."""
    coef = haar_dwt2(img, 1)
    h, w = coef.shape[-2] // 2, coef.shape[-1] // 2
    return coef[..., h:, w:]
