# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_np.py``.

Same signatures, same semantics, same constants.  The numpy module is the
reference; this one exists for speed on the per-pixel inner loops.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor, sqrt

cnp.import_array()

NORM_EPS = 1e-12  # keep in sync with _kernels_np.NORM_EPS
cdef double _EPS = 1e-12

FILL_CLAMP = 0
FILL_ZERO = 1

BIAS_NONE = 0
BIAS_FIRST = 1
BIAS_AFTER = 2


cdef inline Py_ssize_t _clamp(Py_ssize_t i, Py_ssize_t lo, Py_ssize_t hi) nogil:
    if i < lo:
        return lo
    if i > hi:
        return hi
    return i


def bilinear_warp(double[:, :, ::1] img, double[:, ::1] u, double[:, ::1] v, int fill=0):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    out_arr = np.empty((h, w, c), dtype=np.float64)
    valid_arr = np.empty((h, w), dtype=np.uint8)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.uint8_t[:, ::1] valid = valid_arr
    cdef Py_ssize_t i, j, ch, x0c, x1c, y0c, y1c
    cdef double gx, gy, x0f, y0f, fx, fy, top, bot
    cdef bint ok
    with nogil:
        for i in range(h):
            for j in range(w):
                gx = j + u[i, j]
                gy = i + v[i, j]
                x0f = floor(gx)
                y0f = floor(gy)
                fx = gx - x0f
                fy = gy - y0f
                x0c = _clamp(<Py_ssize_t>x0f, 0, w - 1)
                x1c = _clamp(<Py_ssize_t>x0f + 1, 0, w - 1)
                y0c = _clamp(<Py_ssize_t>y0f, 0, h - 1)
                y1c = _clamp(<Py_ssize_t>y0f + 1, 0, h - 1)
                ok = gx >= 0.0 and gx <= w - 1.0 and gy >= 0.0 and gy <= h - 1.0
                valid[i, j] = 1 if ok else 0
                if fill == 1 and not ok:
                    for ch in range(c):
                        out[i, j, ch] = 0.0
                else:
                    for ch in range(c):
                        top = img[y0c, x0c, ch] * (1.0 - fx) + img[y0c, x1c, ch] * fx
                        bot = img[y1c, x0c, ch] * (1.0 - fx) + img[y1c, x1c, ch] * fx
                        out[i, j, ch] = top * (1.0 - fy) + bot * fy
    return out_arr, valid_arr.view(np.bool_)


def bilinear_warp_gradient(double[:, :, ::1] img, double[:, ::1] u, double[:, ::1] v):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    du_arr = np.empty((h, w, c), dtype=np.float64)
    dv_arr = np.empty((h, w, c), dtype=np.float64)
    cdef double[:, :, ::1] du = du_arr
    cdef double[:, :, ::1] dv = dv_arr
    cdef Py_ssize_t i, j, ch, x0c, x1c, y0c, y1c
    cdef double gx, gy, x0f, y0f, fx, fy
    with nogil:
        for i in range(h):
            for j in range(w):
                gx = j + u[i, j]
                gy = i + v[i, j]
                x0f = floor(gx)
                y0f = floor(gy)
                fx = gx - x0f
                fy = gy - y0f
                x0c = _clamp(<Py_ssize_t>x0f, 0, w - 1)
                x1c = _clamp(<Py_ssize_t>x0f + 1, 0, w - 1)
                y0c = _clamp(<Py_ssize_t>y0f, 0, h - 1)
                y1c = _clamp(<Py_ssize_t>y0f + 1, 0, h - 1)
                for ch in range(c):
                    du[i, j, ch] = (img[y0c, x1c, ch] - img[y0c, x0c, ch]) * (1.0 - fy) \
                        + (img[y1c, x1c, ch] - img[y1c, x0c, ch]) * fy
                    dv[i, j, ch] = (img[y1c, x0c, ch] - img[y0c, x0c, ch]) * (1.0 - fx) \
                        + (img[y1c, x1c, ch] - img[y0c, x1c, ch]) * fx
    return du_arr, dv_arr


def extract_patches(double[:, ::1] img, int k):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t pad = k // 2
    out_arr = np.empty((h, w, k * k), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, dy, dx, sy, sx, slot
    with nogil:
        for i in range(h):
            for j in range(w):
                slot = 0
                for dy in range(-pad, pad + 1):
                    sy = _clamp(i + dy, 0, h - 1)
                    for dx in range(-pad, pad + 1):
                        sx = _clamp(j + dx, 0, w - 1)
                        out[i, j, slot] = img[sy, sx]
                        slot += 1
    return out_arr


def normalize_weights(double[:, :, ::1] weights):
    cdef Py_ssize_t h = weights.shape[0], w = weights.shape[1], k2 = weights.shape[2]
    out_arr = np.empty((h, w, k2), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, m
    cdef double s
    with nogil:
        for i in range(h):
            for j in range(w):
                s = 0.0
                for m in range(k2):
                    s += fabs(weights[i, j, m])
                s += _EPS
                for m in range(k2):
                    out[i, j, m] = weights[i, j, m] / s
    return out_arr


def kpn_apply(double[:, ::1] depth, double[:, :, ::1] weights, double[:, ::1] bias,
              bint normalize, int bias_mode):
    cdef Py_ssize_t h = depth.shape[0], w = depth.shape[1], k2 = weights.shape[2]
    cdef int k = <int>(sqrt(k2) + 0.5)
    cdef Py_ssize_t pad = k // 2
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, dy, dx, sy, sx, slot, m
    cdef double s, acc, wv, x
    with nogil:
        for i in range(h):
            for j in range(w):
                s = 1.0
                if normalize:
                    s = 0.0
                    for m in range(k2):
                        s += fabs(weights[i, j, m])
                    s += _EPS
                acc = 0.0
                slot = 0
                for dy in range(-pad, pad + 1):
                    sy = _clamp(i + dy, 0, h - 1)
                    for dx in range(-pad, pad + 1):
                        sx = _clamp(j + dx, 0, w - 1)
                        x = depth[sy, sx]
                        if bias_mode == 1:
                            x += bias[sy, sx]
                        wv = weights[i, j, slot]
                        if normalize:
                            wv /= s
                        acc += wv * x
                        slot += 1
                if bias_mode == 2:
                    acc += bias[i, j]
                out[i, j] = acc
    return out_arr


def kpn_apply_vjp(double[:, ::1] depth, double[:, :, ::1] weights, double[:, ::1] bias,
                  bint normalize, int bias_mode, double[:, ::1] grad_out):
    cdef Py_ssize_t h = depth.shape[0], w = depth.shape[1], k2 = weights.shape[2]
    cdef int k = <int>(sqrt(k2) + 0.5)
    cdef Py_ssize_t pad = k // 2
    gw_arr = np.empty((h, w, k2), dtype=np.float64)
    gb_arr = np.zeros((h, w), dtype=np.float64)
    gd_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[:, ::1] gb = gb_arr
    cdef double[:, ::1] gd = gd_arr
    cdef Py_ssize_t i, j, dy, dx, sy, sx, slot, m
    cdef double s, dot, g, wv, x, sgn, coeff
    with nogil:
        for i in range(h):
            for j in range(w):
                g = grad_out[i, j]
                s = 1.0
                if normalize:
                    s = 0.0
                    for m in range(k2):
                        s += fabs(weights[i, j, m])
                    s += _EPS
                dot = 0.0
                slot = 0
                for dy in range(-pad, pad + 1):
                    sy = _clamp(i + dy, 0, h - 1)
                    for dx in range(-pad, pad + 1):
                        sx = _clamp(j + dx, 0, w - 1)
                        x = depth[sy, sx]
                        if bias_mode == 1:
                            x += bias[sy, sx]
                        wv = weights[i, j, slot]
                        if normalize:
                            wv /= s
                        dot += wv * x
                        coeff = wv * g
                        gd[sy, sx] += coeff
                        if bias_mode == 1:
                            gb[sy, sx] += coeff
                        slot += 1
                slot = 0
                for dy in range(-pad, pad + 1):
                    sy = _clamp(i + dy, 0, h - 1)
                    for dx in range(-pad, pad + 1):
                        sx = _clamp(j + dx, 0, w - 1)
                        x = depth[sy, sx]
                        if bias_mode == 1:
                            x += bias[sy, sx]
                        if normalize:
                            wv = weights[i, j, slot]
                            sgn = 0.0
                            if wv > 0.0:
                                sgn = 1.0
                            elif wv < 0.0:
                                sgn = -1.0
                            gw[i, j, slot] = (x - dot * sgn) * (g / s)
                        else:
                            gw[i, j, slot] = x * g
                        slot += 1
                if bias_mode == 2:
                    gb[i, j] = g
    return gw_arr, gb_arr, gd_arr
