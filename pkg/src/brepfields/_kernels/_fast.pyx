# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry kernels: even-odd parity and polyline distance."""

import numpy as np

cimport numpy as cnp

from libc.math cimport INFINITY, sqrt


def polygon_parity(double[:, ::1] points, double[:, ::1] verts,
                   long long[::1] starts):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t nl = starts.shape[0] - 1
    out = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] o = out
    cdef Py_ssize_t i, li, j
    cdef double px, py, x1, y1, x2, y2, xc
    cdef int par
    for i in range(n):
        px = points[i, 0]
        py = points[i, 1]
        par = 0
        for li in range(nl):
            for j in range(starts[li], starts[li + 1] - 1):
                x1 = verts[j, 0]
                y1 = verts[j, 1]
                x2 = verts[j + 1, 0]
                y2 = verts[j + 1, 1]
                if (y1 <= py and py < y2) or (y2 <= py and py < y1):
                    xc = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
                    if xc > px:
                        par ^= 1
        o[i] = <unsigned char> par
    return out


def polyline_distance(double[:, ::1] points, double[:, ::1] verts,
                      long long[::1] starts):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t nl = starts.shape[0] - 1
    out = np.full(n, np.inf, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i, li, j
    cdef double px, py, ax, ay, dx, dy, rx, ry, seg_len2, t, fx, fy, dist2, best
    for i in range(n):
        px = points[i, 0]
        py = points[i, 1]
        best = INFINITY
        for li in range(nl):
            for j in range(starts[li], starts[li + 1] - 1):
                ax = verts[j, 0]
                ay = verts[j, 1]
                dx = verts[j + 1, 0] - ax
                dy = verts[j + 1, 1] - ay
                rx = px - ax
                ry = py - ay
                seg_len2 = dx * dx + dy * dy
                if seg_len2 > 0.0:
                    t = (rx * dx + ry * dy) / seg_len2
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                else:
                    t = 0.0
                fx = rx - t * dx
                fy = ry - t * dy
                dist2 = fx * fx + fy * fy
                if dist2 < best:
                    best = dist2
        o[i] = sqrt(best)
    return out
