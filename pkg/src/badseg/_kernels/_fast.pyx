# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel core: hot loops of the conv/resample/blur kernels.

Must match `reference.py` to float tolerance; see tests/test_kernels.py.
Convolution loops keep the innermost index contiguous so the C compiler can
vectorize them.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

ctypedef cnp.float32_t f32
ctypedef cnp.float64_t f64

# restrict-qualified inner loops so the C compiler can vectorize them
cdef extern from *:
    """
    static void bs_axpy(float* restrict y, const float* restrict x,
                        float a, int n) {
        for (int i = 0; i < n; ++i) y[i] += a * x[i];
    }
    static float bs_dot_axpy(float* restrict gx, const float* restrict g,
                             const float* restrict x, float w, int n) {
        float acc = 0.f;
        for (int i = 0; i < n; ++i) { acc += g[i] * x[i]; gx[i] += w * g[i]; }
        return acc;
    }
    """
    void bs_axpy(f32 *y, const f32 *x, f32 a, int n) nogil
    f32 bs_dot_axpy(f32 *gx, const f32 *g, const f32 *x, f32 w, int n) nogil


cdef inline int _jlo(int pad, int kj, int stride) nogil:
    cdef int num = pad - kj
    if num <= 0:
        return 0
    return (num + stride - 1) // stride


cdef inline int _jhi(int limit, int kj, int pad, int stride, int nout) nogil:
    # largest j with j*stride + kj - pad <= limit-1, clipped to nout
    cdef int top = (limit - 1 - kj + pad) // stride + 1
    if top < 0:
        top = 0
    if top > nout:
        top = nout
    return top


def conv2d_fwd(cnp.ndarray x_in, cnp.ndarray w_in, cnp.ndarray b_in,
               int stride, int pad):
    cdef f32[:, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float32)
    cdef f32[:, :, :, ::1] w = np.ascontiguousarray(w_in, dtype=np.float32)
    cdef f32[::1] b = np.ascontiguousarray(b_in, dtype=np.float32)
    cdef int c = x.shape[0], h = x.shape[1], ww = x.shape[2]
    cdef int o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (ww + 2 * pad - kw) // stride + 1
    y_arr = np.empty((o, ho, wo), dtype=np.float32)
    cdef f32[:, :, ::1] y = y_arr
    cdef int oc, ic, i, j, ki, kj, ri, j0, j1, off
    cdef f32 wv, bv
    cdef f32 *yrow
    cdef const f32 *xrow
    with nogil:
        for oc in range(o):
            bv = b[oc]
            for i in range(ho):
                yrow = &y[oc, i, 0]
                for j in range(wo):
                    yrow[j] = bv
        for oc in range(o):
            for ic in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        wv = w[oc, ic, ki, kj]
                        j0 = _jlo(pad, kj, stride)
                        j1 = _jhi(ww, kj, pad, stride, wo)
                        off = kj - pad
                        for i in range(ho):
                            ri = i * stride + ki - pad
                            if ri < 0 or ri >= h:
                                continue
                            yrow = &y[oc, i, 0]
                            xrow = &x[ic, ri, 0]
                            if stride == 1:
                                if j1 > j0:
                                    bs_axpy(yrow + j0, xrow + j0 + off, wv, j1 - j0)
                            else:
                                for j in range(j0, j1):
                                    yrow[j] += wv * xrow[j * stride + off]
    return y_arr


def conv2d_bwd(cnp.ndarray x_in, cnp.ndarray w_in, int stride, int pad,
               cnp.ndarray gout_in):
    cdef f32[:, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float32)
    cdef f32[:, :, :, ::1] w = np.ascontiguousarray(w_in, dtype=np.float32)
    cdef f32[:, :, ::1] g = np.ascontiguousarray(gout_in, dtype=np.float32)
    cdef int c = x.shape[0], h = x.shape[1], ww = x.shape[2]
    cdef int o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = g.shape[1], wo = g.shape[2]
    gx_arr = np.zeros((c, h, ww), dtype=np.float32)
    gw_arr = np.zeros((o, c, kh, kw), dtype=np.float32)
    gb_arr = np.zeros(o, dtype=np.float32)
    cdef f32[:, :, ::1] gx = gx_arr
    cdef f32[:, :, :, ::1] gw = gw_arr
    cdef f32[::1] gb = gb_arr
    cdef int oc, ic, i, j, ki, kj, ri, j0, j1, off
    cdef f32 wv, gv
    cdef f64 acc, accb
    cdef const f32 *grow
    cdef const f32 *xrow
    cdef f32 *gxrow
    with nogil:
        for oc in range(o):
            accb = 0.0
            for i in range(ho):
                grow = &g[oc, i, 0]
                for j in range(wo):
                    accb += grow[j]
            gb[oc] = <f32>accb
        for oc in range(o):
            for ic in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        wv = w[oc, ic, ki, kj]
                        j0 = _jlo(pad, kj, stride)
                        j1 = _jhi(ww, kj, pad, stride, wo)
                        off = kj - pad
                        acc = 0.0
                        for i in range(ho):
                            ri = i * stride + ki - pad
                            if ri < 0 or ri >= h:
                                continue
                            grow = &g[oc, i, 0]
                            xrow = &x[ic, ri, 0]
                            gxrow = &gx[ic, ri, 0]
                            if stride == 1:
                                for j in range(j0, j1):
                                    gv = grow[j]
                                    acc += gv * xrow[j + off]
                                    gxrow[j + off] += wv * gv
                            else:
                                for j in range(j0, j1):
                                    gv = grow[j]
                                    acc += gv * xrow[j * stride + off]
                                    gxrow[j * stride + off] += wv * gv
                        gw[oc, ic, ki, kj] = <f32>acc
    return gx_arr, gw_arr, gb_arr


def resize_bilinear_fwd(cnp.ndarray x_in, int out_h, int out_w):
    cdef f32[:, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float32)
    cdef int c = x.shape[0], h = x.shape[1], w = x.shape[2]
    y_arr = np.empty((c, out_h, out_w), dtype=np.float32)
    cdef f32[:, :, ::1] y = y_arr
    cdef f64 sy = <f64>h / out_h, sx = <f64>w / out_w
    cdef f64 src
    cdef f32 ty, tx
    cdef int i, j, ic, r0, r1, c0, c1
    with nogil:
        for i in range(out_h):
            src = (i + 0.5) * sy - 0.5
            if src < 0.0:
                src = 0.0
            if src > h - 1.0:
                src = h - 1.0
            r0 = <int>floor(src)
            r1 = r0 + 1 if r0 + 1 < h else h - 1
            ty = <f32>(src - r0)
            for j in range(out_w):
                src = (j + 0.5) * sx - 0.5
                if src < 0.0:
                    src = 0.0
                if src > w - 1.0:
                    src = w - 1.0
                c0 = <int>floor(src)
                c1 = c0 + 1 if c0 + 1 < w else w - 1
                tx = <f32>(src - c0)
                for ic in range(c):
                    y[ic, i, j] = (
                        (x[ic, r0, c0] * (1.0 - tx) + x[ic, r0, c1] * tx) * (1.0 - ty)
                        + (x[ic, r1, c0] * (1.0 - tx) + x[ic, r1, c1] * tx) * ty)
    return y_arr


def resize_bilinear_bwd(int in_h, int in_w, cnp.ndarray gout_in):
    cdef f32[:, :, ::1] g = np.ascontiguousarray(gout_in, dtype=np.float32)
    cdef int c = g.shape[0], oh = g.shape[1], ow = g.shape[2]
    gx_arr = np.zeros((c, in_h, in_w), dtype=np.float64)
    cdef f64[:, :, ::1] gx = gx_arr
    cdef f64 sy = <f64>in_h / oh, sx = <f64>in_w / ow
    cdef f64 src, ty, tx, gv
    cdef int i, j, ic, r0, r1, c0, c1
    with nogil:
        for i in range(oh):
            src = (i + 0.5) * sy - 0.5
            if src < 0.0:
                src = 0.0
            if src > in_h - 1.0:
                src = in_h - 1.0
            r0 = <int>floor(src)
            r1 = r0 + 1 if r0 + 1 < in_h else in_h - 1
            ty = src - r0
            for j in range(ow):
                src = (j + 0.5) * sx - 0.5
                if src < 0.0:
                    src = 0.0
                if src > in_w - 1.0:
                    src = in_w - 1.0
                c0 = <int>floor(src)
                c1 = c0 + 1 if c0 + 1 < in_w else in_w - 1
                tx = src - c0
                for ic in range(c):
                    gv = g[ic, i, j]
                    gx[ic, r0, c0] += gv * (1.0 - ty) * (1.0 - tx)
                    gx[ic, r0, c1] += gv * (1.0 - ty) * tx
                    gx[ic, r1, c0] += gv * ty * (1.0 - tx)
                    gx[ic, r1, c1] += gv * ty * tx
    return gx_arr.astype(np.float32)


def warp_bilinear(cnp.ndarray img_in, cnp.ndarray disp_in):
    squeeze = img_in.ndim == 2
    cdef f32[:, :, ::1] img = np.ascontiguousarray(
        img_in[:, :, None] if squeeze else img_in, dtype=np.float32)
    cdef f32[:, :, ::1] disp = np.ascontiguousarray(disp_in, dtype=np.float32)
    cdef int h = img.shape[0], w = img.shape[1], c = img.shape[2]
    out_arr = np.empty((h, w, c), dtype=np.float32)
    cdef f32[:, :, ::1] out = out_arr
    cdef f64 sy, sx
    cdef f32 ty, tx
    cdef int i, j, ic, y0, y1, x0, x1
    with nogil:
        for i in range(h):
            for j in range(w):
                sy = i + <f64>disp[i, j, 0]
                sx = j + <f64>disp[i, j, 1]
                if sy < 0.0:
                    sy = 0.0
                if sy > h - 1.0:
                    sy = h - 1.0
                if sx < 0.0:
                    sx = 0.0
                if sx > w - 1.0:
                    sx = w - 1.0
                y0 = <int>floor(sy)
                x0 = <int>floor(sx)
                y1 = y0 + 1 if y0 + 1 < h else h - 1
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                ty = <f32>(sy - y0)
                tx = <f32>(sx - x0)
                for ic in range(c):
                    out[i, j, ic] = (
                        (img[y0, x0, ic] * (1.0 - tx) + img[y0, x1, ic] * tx)
                        * (1.0 - ty)
                        + (img[y1, x0, ic] * (1.0 - tx) + img[y1, x1, ic] * tx) * ty)
    result = out_arr
    return result[:, :, 0] if squeeze else result


def blur_separable(cnp.ndarray field_in, cnp.ndarray kernel_in):
    cdef f64[:, ::1] field = np.ascontiguousarray(field_in, dtype=np.float64)
    cdef f64[::1] k = np.ascontiguousarray(kernel_in, dtype=np.float64)
    cdef int h = field.shape[0], w = field.shape[1], n = k.shape[0]
    cdef int r = (n - 1) // 2
    tmp_arr = np.empty((h, w), dtype=np.float64)
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef f64[:, ::1] tmp = tmp_arr
    cdef f64[:, ::1] out = out_arr
    cdef int i, j, t, idx
    cdef f64 acc
    with nogil:
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for t in range(n):
                    idx = i + t - r
                    if idx < 0:
                        idx = 0
                    elif idx >= h:
                        idx = h - 1
                    acc += field[idx, j] * k[t]
                tmp[i, j] = acc
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for t in range(n):
                    idx = j + t - r
                    if idx < 0:
                        idx = 0
                    elif idx >= w:
                        idx = w - 1
                    acc += tmp[i, idx] * k[t]
                out[i, j] = acc
    return out_arr.astype(field_in.dtype)
