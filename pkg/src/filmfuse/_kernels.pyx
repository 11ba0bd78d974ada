# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-pixel kernels. Must agree with ``_kernels_py`` to 1e-12."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, atan, fabs, M_PI

cnp.import_array()


cdef inline Py_ssize_t _clamp(Py_ssize_t i, Py_ssize_t n) nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) nogil:
    # half-sample symmetric: (d c b a | a b c d | d c b a)
    cdef Py_ssize_t period = 2 * n
    if n == 1:
        return 0
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - 1 - i
    return i


def sobel(double[:, ::1] img):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gx = np.empty((h, w), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gy = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] gxv = gx
    cdef double[:, ::1] gyv = gy
    cdef Py_ssize_t i, j, im, ip, jm, jp
    with nogil:
        for i in range(h):
            im = _clamp(i - 1, h)
            ip = _clamp(i + 1, h)
            for j in range(w):
                jm = _clamp(j - 1, w)
                jp = _clamp(j + 1, w)
                gxv[i, j] = ((img[im, jp] - img[im, jm])
                             + 2.0 * (img[i, jp] - img[i, jm])
                             + (img[ip, jp] - img[ip, jm]))
                gyv[i, j] = ((img[ip, jm] - img[im, jm])
                             + 2.0 * (img[ip, j] - img[im, j])
                             + (img[ip, jp] - img[im, jp]))
    return gx, gy


def correlate_separable(double[:, ::1] img, double[::1] taps):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t k = taps.shape[0]
    cdef Py_ssize_t r = k // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=2] tmp = np.empty((h, w), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((h, w), dtype=np.float64)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] cols = np.empty(w + k, dtype=np.intp)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] rows = np.empty(h + k, dtype=np.intp)
    cdef double[:, ::1] tv = tmp
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t[::1] cv = cols
    cdef Py_ssize_t[::1] rv = rows
    cdef Py_ssize_t i, j, t, src
    cdef double acc, c
    with nogil:
        # reflected source index of every padded position, computed once
        for j in range(w + k):
            cv[j] = _reflect(j - r, w)
        for i in range(h + k):
            rv[i] = _reflect(i - r, h)
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for t in range(k):
                    acc = acc + taps[t] * img[i, cv[j + t]]
                tv[i, j] = acc
        # vertical pass walks rows so memory stays contiguous; taps are
        # accumulated in the same order as the numpy fallback
        for i in range(h):
            for t in range(k):
                c = taps[t]
                src = rv[i + t]
                for j in range(w):
                    ov[i, j] = ov[i, j] + c * tv[src, j]
    return out


def qabf_map(double[:, ::1] gs, double[:, ::1] as_, double[:, ::1] gf,
             double[:, ::1] af, double tg, double kg, double sg,
             double ta, double ka, double sa):
    cdef Py_ssize_t h = gs.shape[0], w = gs.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] q = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] qv = q
    cdef Py_ssize_t i, j
    cdef double g, a, qg, qa, x, y
    with nogil:
        for i in range(h):
            for j in range(w):
                x = gs[i, j]
                y = gf[i, j]
                if x == y:
                    g = 1.0
                elif x > y:
                    g = y / x
                else:
                    g = x / y
                a = 1.0 - fabs(as_[i, j] - af[i, j]) / (M_PI / 2.0)
                qg = tg / (1.0 + exp(kg * (g - sg)))
                qa = ta / (1.0 + exp(ka * (a - sa)))
                qv[i, j] = qg * qa
    return q
