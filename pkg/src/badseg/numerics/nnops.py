"""Structured network ops on Tensors: convolution, bilinear resize, padding.

Forward/backward inner loops are delegated to the kernel backend
(badseg._kernels); this module only wires them into the autodiff graph.
"""
from __future__ import annotations

import numpy as np

from .. import _kernels as K
from .._kernels import reference as _ref
from .tensor import Tensor, _make

__all__ = ["conv2d", "bilinear_resize", "pad_reflect"]


def _backend(dtype):
    # The compiled backend is float32-only; float64 (grad_check probes)
    # goes through the dtype-generic numpy reference.
    return K.impl if dtype == np.float32 else _ref


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution (cross-correlation), x: (C,H,W), w: (O,C,kh,kw), b: (O,)."""
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: x={x.shape}, w={w.shape}")
    kern = _backend(x.dtype)
    y = kern.conv2d_fwd(x.data, w.data, b.data, stride, pad)
    out = _make(y, (x, w, b), None, "conv2d")
    if out._backward is not None:
        def bw(g):
            g = np.ascontiguousarray(g, dtype=y.dtype)
            gx, gw, gb = kern.conv2d_bwd(x.data, w.data, stride, pad, g)
            if x._req:
                x._accum(gx)
            if w._req:
                w._accum(gw)
            if b._req:
                b._accum(gb)
        out._backward = bw
    return out


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize (C,H,W) to (C,out_h,out_w); half-pixel centers, border clamp."""
    if x.ndim != 3:
        raise ValueError(f"bilinear_resize expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    kern = _backend(x.dtype)
    y = kern.resize_bilinear_fwd(x.data, out_h, out_w)
    out = _make(y, (x,), None, "bilinear_resize")
    if out._backward is not None:
        def bw(g):
            g = np.ascontiguousarray(g, dtype=y.dtype)
            x._accum(kern.resize_bilinear_bwd(h, w, g))
        out._backward = bw
    return out


def pad_reflect(x: Tensor, bottom: int, right: int) -> Tensor:
    """Reflect-pad the two trailing spatial axes of a (C,H,W) tensor."""
    if bottom == 0 and right == 0:
        return x
    c, h, w = x.shape
    if bottom > h - 1 or right > w - 1:
        raise ValueError("reflect pad wider than the image")
    y = np.pad(x.data, ((0, 0), (0, bottom), (0, right)), mode="reflect")
    out = _make(y, (x,), None, "pad_reflect", check=False)
    if out._backward is not None:
        rows = np.concatenate([np.arange(h), h - 2 - np.arange(bottom)])
        cols = np.concatenate([np.arange(w), w - 2 - np.arange(right)])

        def bw(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, (slice(None), rows[:, None], cols[None, :]), g)
            x._accum(gx)
        out._backward = bw
    return out
