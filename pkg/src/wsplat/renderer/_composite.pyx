# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel compositing loops (forward and adjoint)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def forward(int width, int height, int tile,
            const cnp.int64_t[::1] ids, const cnp.int64_t[:, ::1] ranges,
            const double[:, ::1] mean2d, const double[:, ::1] conic,
            const double[::1] opac, const double[:, ::1] color,
            const double[::1] background,
            bint early_stop, double alpha_min, double alpha_max, double t_min):
    cdef Py_ssize_t ntx = (width + tile - 1) // tile
    cdef Py_ssize_t ntiles = ranges.shape[0]
    image_arr = np.empty((height, width, 3))
    trans_arr = np.ones((height, width))
    ncon_arr = np.zeros((height, width), dtype=np.int64)
    cdef double[:, :, ::1] image = image_arr
    cdef double[:, ::1] trans = trans_arr
    cdef cnp.int64_t[:, ::1] ncon = ncon_arr
    cdef Py_ssize_t t, tx, ty, px, py, k, g, s, e, last
    cdef double T, c0, c1, c2, dx, dy, q, a, w
    for t in range(ntiles):
        ty = t // ntx
        tx = t - ty * ntx
        s = ranges[t, 0]
        e = ranges[t, 1]
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                last = 0
                for k in range(s, e):
                    g = ids[k]
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    q = conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy + conic[g, 2] * dy * dy
                    a = opac[g] * exp(-0.5 * q)
                    if a > alpha_max:
                        a = alpha_max
                    if a < alpha_min:
                        continue
                    w = a * T
                    c0 = c0 + w * color[g, 0]
                    c1 = c1 + w * color[g, 1]
                    c2 = c2 + w * color[g, 2]
                    T = T * (1.0 - a)
                    last = k - s + 1
                    if early_stop and T < t_min:
                        break
                image[py, px, 0] = c0 + T * background[0]
                image[py, px, 1] = c1 + T * background[1]
                image[py, px, 2] = c2 + T * background[2]
                trans[py, px] = T
                ncon[py, px] = last
    return image_arr, trans_arr, ncon_arr


def backward(int width, int height, int tile,
             const cnp.int64_t[::1] ids, const cnp.int64_t[:, ::1] ranges,
             const double[:, ::1] mean2d, const double[:, ::1] conic,
             const double[::1] opac, const double[:, ::1] color,
             const double[::1] background,
             bint early_stop, double alpha_min, double alpha_max, double t_min,
             const double[:, ::1] trans, const cnp.int64_t[:, ::1] ncon,
             const double[:, :, ::1] d_image):
    cdef Py_ssize_t ntx = (width + tile - 1) // tile
    cdef Py_ssize_t ntiles = ranges.shape[0]
    grads_arr = np.zeros((ids.shape[0], 9))
    cdef double[:, ::1] pg = grads_arr
    cdef Py_ssize_t t, tx, ty, px, py, k, g, s
    cdef double T, acc0, acc1, acc2, d0, d1, d2, dx, dy, q, gauss, raw, a, d_alpha, d_q
    cdef bint clamped
    for t in range(ntiles):
        ty = t // ntx
        tx = t - ty * ntx
        s = ranges[t, 0]
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                T = trans[py, px]
                acc0 = background[0]
                acc1 = background[1]
                acc2 = background[2]
                d0 = d_image[py, px, 0]
                d1 = d_image[py, px, 1]
                d2 = d_image[py, px, 2]
                for k in range(s + ncon[py, px] - 1, s - 1, -1):
                    g = ids[k]
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    q = conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy + conic[g, 2] * dy * dy
                    gauss = exp(-0.5 * q)
                    raw = opac[g] * gauss
                    clamped = raw > alpha_max
                    a = alpha_max if clamped else raw
                    if a < alpha_min:
                        continue
                    T = T / (1.0 - a)
                    pg[k, 6] += a * T * d0
                    pg[k, 7] += a * T * d1
                    pg[k, 8] += a * T * d2
                    d_alpha = T * ((color[g, 0] - acc0) * d0 + (color[g, 1] - acc1) * d1
                                   + (color[g, 2] - acc2) * d2)
                    acc0 = a * color[g, 0] + (1.0 - a) * acc0
                    acc1 = a * color[g, 1] + (1.0 - a) * acc1
                    acc2 = a * color[g, 2] + (1.0 - a) * acc2
                    if clamped:
                        continue
                    pg[k, 5] += d_alpha * gauss
                    d_q = -0.5 * gauss * d_alpha * opac[g]
                    pg[k, 2] += d_q * dx * dx
                    pg[k, 3] += d_q * 2.0 * dx * dy
                    pg[k, 4] += d_q * dy * dy
                    pg[k, 0] += d_q * -2.0 * (conic[g, 0] * dx + conic[g, 1] * dy)
                    pg[k, 1] += d_q * -2.0 * (conic[g, 1] * dx + conic[g, 2] * dy)
    return grads_arr
