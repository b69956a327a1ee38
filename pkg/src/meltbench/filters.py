"""Separable Gaussian filtering with reflection padding.

Reflection excludes the edge pixel (``d c b | a b c d | c b a``), the
convention of torch/torchvision ``reflect`` padding.  A window of size
``h`` samples the Gaussian at integer offsets ``-(h // 2) ... h - 1 - h // 2``
so an even window has one more tap on the negative side.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ConfigError


def kernel_offsets(size: int) -> np.ndarray:
    return np.arange(size, dtype=np.float64) - size // 2


def gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian weights of length ``size``."""
    if size < 1:
        raise ConfigError(f"kernel size must be >= 1, got {size}")
    if not sigma > 0:
        raise ConfigError(f"kernel sigma must be > 0, got {sigma}")
    d = kernel_offsets(size)
    w = np.exp(-0.5 * (d / sigma) ** 2)
    return w / w.sum()


def gaussian_filter(image, size: int, sigma: float, dtype=np.float64) -> np.ndarray:
    """Blur a 2-D array with a ``size`` x ``size`` Gaussian, reflection padded.

    NaN propagates across the window; callers zero-fill invalid pixels first
    when they need a clean result.
    """
    img = np.asarray(image, dtype=dtype)
    if img.ndim != 2:
        raise ConfigError(f"expected a 2-D array, got shape {img.shape}")
    if min(img.shape) < 2 and size > 1:
        raise ConfigError(f"cannot reflect-pad an image of shape {img.shape}")
    w = gaussian_kernel1d(size, sigma)
    # scipy centers the weights on index len // 2 which matches kernel_offsets;
    # 'mirror' is the edge-excluding reflection and repeats for wide windows.
    out = ndimage.correlate1d(img, w, axis=0, mode="mirror")
    return ndimage.correlate1d(out, w, axis=1, mode="mirror")
