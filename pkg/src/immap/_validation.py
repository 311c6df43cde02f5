"""Input checks shared by the estimators and the CLI.

sklearn's ``check_array`` rejects complex input, so these are hand-rolled.
"""

import numpy as np

from .core import DimensionError
from .operators import NoiseModel, SamplingMask, check_sensitivities


def check_image(x, name="image"):
    x = np.asarray(x)
    if x.ndim != 2 or x.size == 0:
        raise DimensionError(f"{name} must be a non-empty 2D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x.astype(np.complex128, copy=False)


def check_maps(maps, image_shape=None):
    maps = np.asarray(maps)
    if maps.ndim == 2:
        maps = maps[None]
    if maps.ndim != 3:
        raise DimensionError(f"sensitivity maps must be (C, H, W), got shape {maps.shape}")
    if image_shape is not None and maps.shape[1:] != tuple(image_shape):
        raise DimensionError(f"maps cover {maps.shape[1:]}, image is {tuple(image_shape)}")
    maps = maps.astype(np.complex128, copy=False)
    check_sensitivities(maps)
    return maps


def check_mask(mask, image_shape):
    if not isinstance(mask, SamplingMask):
        mask = SamplingMask(np.asarray(mask).astype(bool))
    if mask.shape != tuple(image_shape):
        raise DimensionError(f"mask shape {mask.shape} does not match image {tuple(image_shape)}")
    return mask


def check_kspace(y, kspace_shape):
    y = np.asarray(y)
    if y.shape != tuple(kspace_shape):
        raise DimensionError(f"k-space shape {y.shape}, expected {tuple(kspace_shape)}")
    if not np.all(np.isfinite(y)):
        raise ValueError("k-space contains non-finite values")
    return y.astype(np.complex128, copy=False)


def check_noise(noise, kspace_shape):
    """Accept a NoiseModel, a scalar standard deviation or a variance array."""
    if isinstance(noise, NoiseModel):
        model = noise
    elif np.ndim(noise) == 0:
        model = NoiseModel.white(float(noise), kspace_shape)
    else:
        model = NoiseModel(np.broadcast_to(np.asarray(noise, dtype=np.float64), kspace_shape))
    if model.shape != tuple(kspace_shape):
        raise DimensionError(f"noise model shape {model.shape}, expected {tuple(kspace_shape)}")
    return model
