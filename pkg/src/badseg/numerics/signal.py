"""Signal kernels for trigger synthesis and analysis: 2-D FFT, Gaussian
smoothing, bilinear warping.

These operate on plain ndarrays (no gradients flow through trigger
construction).  FFT convention: unnormalized forward, 1/(HW) inverse.
"""
from __future__ import annotations

import numpy as np

from .. import _kernels as K

__all__ = ["fft2", "ifft2", "gaussian_kernel1d", "gaussian_smooth", "bilinear_warp"]


def fft2(image: np.ndarray) -> np.ndarray:
    """Unnormalized 2-D DFT of an H×W (real or complex) array."""
    if image.ndim != 2:
        raise ValueError(f"fft2 expects H×W, got shape {image.shape}")
    return np.fft.fft2(image)


def ifft2(spectrum: np.ndarray) -> np.ndarray:
    """Inverse 2-D DFT with 1/(HW) normalization."""
    if spectrum.ndim != 2:
        raise ValueError(f"ifft2 expects H×W, got shape {spectrum.shape}")
    return np.fft.ifft2(spectrum)


def gaussian_kernel1d(kernel_size: int, sigma: float | None = None) -> np.ndarray:
    """Normalized 1-D Gaussian taps; sigma defaults to kernel_size/6."""
    if kernel_size % 2 == 0 or kernel_size < 1:
        raise ValueError(f"kernel_size must be odd and positive, got {kernel_size}")
    if sigma is None:
        sigma = kernel_size / 6.0
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = (kernel_size - 1) // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(field: np.ndarray, kernel_size: int,
                    sigma: float | None = None) -> np.ndarray:
    """Separable Gaussian blur of an H×W field with edge replication."""
    if field.ndim != 2:
        raise ValueError(f"gaussian_smooth expects H×W, got shape {field.shape}")
    kernel = gaussian_kernel1d(kernel_size, sigma)
    return K.blur_separable(field, kernel)


def bilinear_warp(image: np.ndarray, displacement: np.ndarray) -> np.ndarray:
    """Sample image at (i+d_i, j+d_j) per pixel, clamping to the border.

    image: H×W or H×W×C; displacement: H×W×2 in pixels.  A zero field is a
    bit-for-bit identity.
    """
    if displacement.shape != image.shape[:2] + (2,):
        raise ValueError(
            f"displacement shape {displacement.shape} does not match image {image.shape}")
    if not np.isfinite(displacement).all():
        raise ValueError("displacement field contains non-finite values")
    return K.warp_bilinear(image, displacement)
