"""Pure-numpy kernel implementations (fallback backend).

Semantics are the contract; the compiled backend in `_fast.pyx` must match
these to float tolerance.  Convolutions take CHW images, zero padding;
bilinear resize uses half-pixel centers with border clamping, so resizing
to the same size is an exact identity.
"""
from __future__ import annotations

import numpy as np

_f32 = np.float32


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int,
            ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (c, kh, kw, ho, wo), (s0, s1, s2, stride * s1, stride * s2))
    return view.reshape(c * kh * kw, ho * wo)


def conv2d_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray,
               stride: int, pad: int) -> np.ndarray:
    c, h, ww = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (ww + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.ascontiguousarray(_im2col(xp, kh, kw, stride, ho, wo))
    y = w.reshape(o, -1) @ cols + b[:, None]
    return y.reshape(o, ho, wo).astype(x.dtype, copy=False)


def conv2d_bwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int,
               gout: np.ndarray):
    c, h, ww = x.shape
    o, _, kh, kw = w.shape
    _, ho, wo = gout.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.ascontiguousarray(_im2col(xp, kh, kw, stride, ho, wo))
    g2 = gout.reshape(o, -1)
    gb = g2.sum(axis=1, dtype=np.float64).astype(x.dtype)
    gw = (g2 @ cols.T).reshape(w.shape).astype(x.dtype, copy=False)
    gcols = (w.reshape(o, -1).T @ g2).reshape(c, kh, kw, ho, wo)
    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
    gx = gxp[:, pad:pad + h, pad:pad + ww] if pad else gxp
    return np.ascontiguousarray(gx), gw, gb


def _resize_taps(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = (src - i0)
    return i0, i1, t


def resize_bilinear_fwd(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    _, h, w = x.shape
    r0, r1, ty = _resize_taps(h, out_h)
    c0, c1, tx = _resize_taps(w, out_w)
    ty = ty[:, None]
    tx = tx[None, :]
    top = x[:, r0][:, :, c0] * (1 - tx) + x[:, r0][:, :, c1] * tx
    bot = x[:, r1][:, :, c0] * (1 - tx) + x[:, r1][:, :, c1] * tx
    return (top * (1 - ty) + bot * ty).astype(x.dtype, copy=False)


def resize_bilinear_bwd(in_h: int, in_w: int, gout: np.ndarray) -> np.ndarray:
    c, oh, ow = gout.shape
    r0, r1, ty = _resize_taps(in_h, oh)
    c0, c1, tx = _resize_taps(in_w, ow)
    ty = ty[:, None]
    tx = tx[None, :]
    gx = np.zeros((c, in_h * in_w), dtype=np.float64)
    g = gout.astype(np.float64, copy=False)
    for rows, wy in ((r0, 1 - ty), (r1, ty)):
        base = rows[:, None] * in_w
        for cols, wx in ((c0, 1 - tx), (c1, tx)):
            idx = (base + cols[None, :]).ravel()
            np.add.at(gx, (slice(None), idx), (g * wy * wx).reshape(c, -1))
    return gx.reshape(c, in_h, in_w).astype(gout.dtype, copy=False)


def warp_bilinear(img: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """Sample img at (i + disp[...,0], j + disp[...,1]); border-clamped."""
    h, w = img.shape[:2]
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    sy = np.clip(ii + disp[..., 0], 0.0, h - 1.0)
    sx = np.clip(jj + disp[..., 1], 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (sy - y0).astype(img.dtype)
    tx = (sx - x0).astype(img.dtype)
    if img.ndim == 3:
        ty = ty[..., None]
        tx = tx[..., None]
    top = img[y0, x0] * (1 - tx) + img[y0, x1] * tx
    bot = img[y1, x0] * (1 - tx) + img[y1, x1] * tx
    return (top * (1 - ty) + bot * ty).astype(img.dtype, copy=False)


def blur_separable(field: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate a 2-D field with a 1-D kernel along each axis, replicate edges."""
    k = kernel.astype(np.float64)
    r = (len(k) - 1) // 2
    out = field.astype(np.float64)
    if r == 0:
        return (out * (k[0] * k[0])).astype(field.dtype, copy=False)
    padded = np.pad(out, ((r, r), (0, 0)), mode="edge")
    view = np.lib.stride_tricks.sliding_window_view(padded, len(k), axis=0)
    out = np.einsum("ijk,k->ij", view, k)
    padded = np.pad(out, ((0, 0), (r, r)), mode="edge")
    view = np.lib.stride_tricks.sliding_window_view(padded, len(k), axis=1)
    out = np.einsum("ijk,k->ij", view, k)
    return out.astype(field.dtype, copy=False)
