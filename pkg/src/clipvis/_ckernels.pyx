# cython: language_level=3
"""Compiled inner loops. Mirrors ``clipvis._pykernels`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def soft_iou_sums(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1], i, j
    cdef double inter = 0.0, union = 0.0, x, y
    for i in range(h):
        for j in range(w):
            x = a[i, j]
            y = b[i, j]
            inter += x * y
            union += x + y - x * y
    return inter, union


def soft_iou_mean(const double[:, :, ::1] a, const double[:, :, ::1] b):
    cdef Py_ssize_t n = a.shape[0], h = a.shape[1], w = a.shape[2], f, i, j
    cdef double inter, union, x, y, total = 0.0
    if n == 0:
        raise ValueError("soft_iou_mean needs at least one frame")
    for f in range(n):
        inter = 0.0
        union = 0.0
        for i in range(h):
            for j in range(w):
                x = a[f, i, j]
                y = b[f, i, j]
                inter += x * y
                union += x + y - x * y
        if union == 0.0:
            total += 1.0
        else:
            total += inter / union
    return total / n


def soft_iou_grad(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1], i, j
    inter, union = soft_iou_sums(a, b)
    cdef double ci = inter, cu = union, cu2 = union * union
    out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] g = out
    for i in range(h):
        for j in range(w):
            g[i, j] = (b[i, j] * cu - ci * (1.0 - b[i, j])) / cu2
    return out


def im2col(const double[:, :, ::1] x, int k, int dilation):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t ch, ky, kx, i, j, si, sj, row
    cdef int half = k // 2
    out = np.zeros((c * k * k, h, w), dtype=np.float64)
    cdef double[:, :, ::1] cols = out
    for ch in range(c):
        for ky in range(k):
            for kx in range(k):
                row = (ch * k + ky) * k + kx
                for i in range(h):
                    si = i + (ky - half) * dilation
                    if si < 0 or si >= h:
                        continue
                    for j in range(w):
                        sj = j + (kx - half) * dilation
                        if sj >= 0 and sj < w:
                            cols[row, i, j] = x[ch, si, sj]
    return out


cdef inline double _pixel(const double[:, :, ::1] x, Py_ssize_t ch,
                          Py_ssize_t i, Py_ssize_t j,
                          Py_ssize_t h, Py_ssize_t w) nogil:
    if i < 0 or i >= h or j < 0 or j >= w:
        return 0.0
    return x[ch, i, j]


def deform_im2col(const double[:, :, ::1] x, const double[:, :, ::1] offsets,
                  int k, int dilation):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t ch, ky, kx, i, j, tap, row, x0, y0
    cdef int half = k // 2
    cdef double px, py, fx, fy, v
    out = np.empty((c * k * k, h, w), dtype=np.float64)
    cdef double[:, :, ::1] cols = out
    for ky in range(k):
        for kx in range(k):
            tap = ky * k + kx
            for i in range(h):
                for j in range(w):
                    px = j + (kx - half) * dilation + offsets[2 * tap, i, j]
                    py = i + (ky - half) * dilation + offsets[2 * tap + 1, i, j]
                    fx = floor(px)
                    fy = floor(py)
                    x0 = <Py_ssize_t>fx
                    y0 = <Py_ssize_t>fy
                    fx = px - fx
                    fy = py - fy
                    for ch in range(c):
                        row = ch * k * k + tap
                        v = (1.0 - fy) * (1.0 - fx) * _pixel(x, ch, y0, x0, h, w)
                        if fx != 0.0:
                            v += (1.0 - fy) * fx * _pixel(x, ch, y0, x0 + 1, h, w)
                        if fy != 0.0:
                            v += fy * (1.0 - fx) * _pixel(x, ch, y0 + 1, x0, h, w)
                            if fx != 0.0:
                                v += fy * fx * _pixel(x, ch, y0 + 1, x0 + 1, h, w)
                        cols[row, i, j] = v
    return out
