# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch gather/scatter.

Mirror of fallback.py. col2im accumulates taps in ascending (di, dj) order,
matching the fallback's loop, so both backends produce bitwise-equal floats.
"""

import numpy as np

cimport cython

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] xp, int k, int s):
    cdef Py_ssize_t B = xp.shape[0]
    cdef Py_ssize_t C = xp.shape[1]
    cdef Py_ssize_t Hp = xp.shape[2]
    cdef Py_ssize_t Wp = xp.shape[3]
    cdef Py_ssize_t oh = (Hp - k) // s + 1
    cdef Py_ssize_t ow = (Wp - k) // s + 1

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.empty((B * oh * ow, C * k * k), dtype=dtype)
    cdef floating[:, ::1] cols = out

    cdef Py_ssize_t b, i, j, c, di, dj, row, col
    with nogil:
        for b in range(B):
            for i in range(oh):
                for j in range(ow):
                    row = (b * oh + i) * ow + j
                    for c in range(C):
                        for di in range(k):
                            col = (c * k + di) * k
                            for dj in range(k):
                                cols[row, col + dj] = xp[b, c, i * s + di, j * s + dj]
    return out


def col2im(floating[:, ::1] cols, Py_ssize_t B, Py_ssize_t C, Py_ssize_t Hp,
           Py_ssize_t Wp, int k, int s):
    cdef Py_ssize_t oh = (Hp - k) // s + 1
    cdef Py_ssize_t ow = (Wp - k) // s + 1

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.zeros((B, C, Hp, Wp), dtype=dtype)
    cdef floating[:, :, :, ::1] xp = out

    cdef Py_ssize_t b, i, j, c, di, dj, row
    # (di, dj) stays outermost: that is the accumulation order contract.
    with nogil:
        for di in range(k):
            for dj in range(k):
                for b in range(B):
                    for c in range(C):
                        for i in range(oh):
                            row = (b * oh + i) * ow
                            for j in range(ow):
                                xp[b, c, i * s + di, j * s + dj] += \
                                    cols[row + j, (c * k + di) * k + dj]
    return out
