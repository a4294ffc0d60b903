"""Kernel backend selection.

The compiled extension (`_fast`, Cython) is preferred; the numpy reference
implementation is used when the extension is unavailable or when
BADSEG_PURE_PYTHON=1 is set.  Both expose the same six entry points.
"""
import os

from . import reference

if os.environ.get("BADSEG_PURE_PYTHON", "") not in ("", "0"):
    impl = reference
    BACKEND = "numpy"
else:
    try:
        from . import _fast as impl
        BACKEND = "cython"
    except ImportError:
        impl = reference
        BACKEND = "numpy"

conv2d_fwd = impl.conv2d_fwd
conv2d_bwd = impl.conv2d_bwd
resize_bilinear_fwd = impl.resize_bilinear_fwd
resize_bilinear_bwd = impl.resize_bilinear_bwd
warp_bilinear = impl.warp_bilinear
blur_separable = impl.blur_separable

__all__ = [
    "BACKEND",
    "reference",
    "impl",
    "conv2d_fwd",
    "conv2d_bwd",
    "resize_bilinear_fwd",
    "resize_bilinear_bwd",
    "warp_bilinear",
    "blur_separable",
]
