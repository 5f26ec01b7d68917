# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel kernels. Arithmetic mirrors ``_kernels_py`` line for line."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()

cdef double EDGE_TOL = 1e-9


def bilinear_sample(const double[:, ::1] img, sy_in, sx_in, bint zero_fill):
    sy_arr = np.ascontiguousarray(sy_in, dtype=np.float64)
    sx_arr = np.ascontiguousarray(sx_in, dtype=np.float64)
    out_shape = sy_arr.shape
    cdef const double[::1] sy = sy_arr.reshape(-1)
    cdef const double[::1] sx = sx_arr.reshape(-1)
    cdef Py_ssize_t n = sy.shape[0]
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, y0, x0, y1, x1
    cdef double y, x, fy, fx, a, b, c, d, top, bot
    cdef double ymax = <double>(h - 1), xmax = <double>(w - 1)
    with nogil:
        for i in range(n):
            y = sy[i]
            x = sx[i]
            if zero_fill and (y < -EDGE_TOL or y > ymax + EDGE_TOL or x < -EDGE_TOL or x > xmax + EDGE_TOL):
                out[i] = 0.0
                continue
            if y < 0.0:
                y = 0.0
            elif y > ymax:
                y = ymax
            if x < 0.0:
                x = 0.0
            elif x > xmax:
                x = xmax
            y0 = <Py_ssize_t>floor(y)
            x0 = <Py_ssize_t>floor(x)
            fy = y - y0
            fx = x - x0
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            x1 = x0 + 1 if x0 + 1 < w else w - 1
            a = img[y0, x0]
            b = img[y0, x1]
            c = img[y1, x0]
            d = img[y1, x1]
            top = a + fx * (b - a)
            bot = c + fx * (d - c)
            out[i] = top + fy * (bot - top)
    return out_arr.reshape(out_shape)


def lbp_codes(const double[:, ::1] img, dy_in, dx_in, int radius):
    cdef const double[::1] dy = np.ascontiguousarray(dy_in, dtype=np.float64)
    cdef const double[::1] dx = np.ascontiguousarray(dx_in, dtype=np.float64)
    cdef Py_ssize_t P = dy.shape[0]
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t r = radius
    cdef Py_ssize_t oh = h - 2 * r, ow = w - 2 * r
    codes_arr = np.zeros((oh, ow), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] codes = codes_arr
    iy_arr = np.floor(np.asarray(dy)).astype(np.intp)
    ix_arr = np.floor(np.asarray(dx)).astype(np.intp)
    cdef Py_ssize_t[::1] iy = iy_arr
    cdef Py_ssize_t[::1] ix = ix_arr
    cdef Py_ssize_t p, row, col, yy, xx, yy1, xx1
    cdef double fy, fx, a, b, c, d, top, bot, g, gc
    cdef cnp.int64_t code
    with nogil:
        for row in range(oh):
            for col in range(ow):
                gc = img[row + r, col + r]
                code = 0
                for p in range(P):
                    fy = dy[p] - iy[p]
                    fx = dx[p] - ix[p]
                    yy = row + r + iy[p]
                    xx = col + r + ix[p]
                    yy1 = yy + 1 if fy > 0.0 else yy
                    xx1 = xx + 1 if fx > 0.0 else xx
                    a = img[yy, xx]
                    b = img[yy, xx1]
                    c = img[yy1, xx]
                    d = img[yy1, xx1]
                    top = a + fx * (b - a)
                    bot = c + fx * (d - c)
                    g = top + fy * (bot - top)
                    if g - gc >= 0.0:
                        code |= (<cnp.int64_t>1) << p
                codes[row, col] = code
    return codes_arr


def hog_cell_histograms(const double[:, ::1] mag, const cnp.int64_t[:, ::1] bin_lo,
                        const double[:, ::1] frac_hi, int cell, int nbins):
    cdef Py_ssize_t cy = mag.shape[0] // cell, cx = mag.shape[1] // cell
    hist_arr = np.zeros((cy, cx, nbins), dtype=np.float64)
    cdef double[:, :, ::1] hist = hist_arr
    cdef Py_ssize_t row, col, lo, hi
    cdef double m, fr
    with nogil:
        for row in range(cy * cell):
            for col in range(cx * cell):
                m = mag[row, col]
                fr = frac_hi[row, col]
                lo = bin_lo[row, col]
                hi = (lo + 1) % nbins
                hist[row // cell, col // cell, lo] += m * (1.0 - fr)
                hist[row // cell, col // cell, hi] += m * fr
    return hist_arr


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double lr, double b1, double b2, double c1, double c2, double eps, double decay):
    """Fused single-pass Adam update on flat contiguous arrays, in place."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi, s, keep = 1.0 - decay
    cdef double lr_c1 = lr / c1, one_b1 = 1.0 - b1, one_b2 = 1.0 - b2
    with nogil:
        for i in range(n):
            gi = g[i]
            m[i] = m[i] * b1 + gi * one_b1
            v[i] = v[i] * b2 + (gi * gi) * one_b2
            s = sqrt(v[i] / c2) + eps
            s = m[i] / s
            s = s * lr_c1
            if decay != 0.0:
                p[i] = p[i] * keep
            p[i] = p[i] - s
