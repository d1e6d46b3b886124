# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in :mod:`watchcd._pykernels`."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

cdef int[8] _DY = [0, -1, -1, -1, 0, 1, 1, 1]
cdef int[8] _DX = [1, 1, 0, -1, -1, -1, 0, 1]


cdef double _median(double* buf, int n) noexcept nogil:
    cdef int i, j
    cdef double key
    for i in range(1, n):
        key = buf[i]
        j = i - 1
        while j >= 0 and buf[j] > key:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = key
    if n % 2 == 1:
        return buf[n // 2]
    return 0.5 * (buf[n // 2 - 1] + buf[n // 2])


def ted_raw(values, available, int window, bint cosine):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const cnp.uint8_t[::1] av = np.ascontiguousarray(available, dtype=np.uint8)
    cdef Py_ssize_t T = v.shape[0], d = v.shape[1]
    raw_arr = np.zeros(T, dtype=np.float64)
    ref_arr = np.zeros(T, dtype=np.uint8)
    cdef double[::1] raw = raw_arr
    cdef cnp.uint8_t[::1] has_ref = ref_arr
    buf_arr = np.empty(max(window, 1), dtype=np.float64)
    cdef double[::1] buf = buf_arr
    refv_arr = np.empty(max(d, 1), dtype=np.float64)
    cdef double[::1] refv = refv_arr
    cdef Py_ssize_t t, u, j, lo
    cdef int n
    cdef double ref, x, acc, nx, nr, du
    with nogil:
        for t in range(T):
            lo = t - window if t >= window else 0
            n = 0
            for u in range(lo, t):
                if av[u]:
                    n += 1
            if n == 0:
                continue
            has_ref[t] = 1
            acc = 0.0
            nx = 0.0
            nr = 0.0
            for j in range(d):
                n = 0
                for u in range(lo, t):
                    if av[u]:
                        buf[n] = v[u, j]
                        n += 1
                ref = _median(&buf[0], n)
                x = v[t, j]
                if cosine:
                    refv[j] = ref
                    nx += x * x
                    nr += ref * ref
                else:
                    acc += (x - ref) * (x - ref)
            if cosine:
                if nx == 0.0 or nr == 0.0:
                    raw[t] = 0.0
                else:
                    # half squared distance of the unit vectors equals 1 - cos
                    nx = sqrt(nx)
                    nr = sqrt(nr)
                    for j in range(d):
                        du = v[t, j] / nx - refv[j] / nr
                        acc += du * du
                    raw[t] = 0.5 * acc
            else:
                raw[t] = sqrt(acc)
    return raw_arr, ref_arr


def glcm(levels, mask, int dy, int dx, int n_levels):
    cdef const cnp.int64_t[:, ::1] lv = np.ascontiguousarray(levels, dtype=np.int64)
    cdef const cnp.uint8_t[:, ::1] mk = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t H = lv.shape[0], W = lv.shape[1], i, j, a, b
    out = np.zeros((n_levels, n_levels), dtype=np.float64)
    cdef double[:, ::1] c = out
    with nogil:
        for i in range(H):
            if i + dy < 0 or i + dy >= H:
                continue
            for j in range(W):
                if j + dx < 0 or j + dx >= W:
                    continue
                if mk[i, j] and mk[i + dy, j + dx]:
                    a = lv[i, j]
                    b = lv[i + dy, j + dx]
                    c[a, b] += 1.0
                    c[b, a] += 1.0
    return out


def lbp_riu2(image, mask):
    cdef const double[:, ::1] im = np.ascontiguousarray(image, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] mk = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t H = im.shape[0], W = im.shape[1], i, j
    codes_arr = np.full((H, W), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] codes = codes_arr
    cdef int k, ones, trans, ok
    cdef int bits[8]
    cdef double cen
    with nogil:
        for i in range(1, H - 1):
            for j in range(1, W - 1):
                if not mk[i, j]:
                    continue
                ok = 1
                cen = im[i, j]
                ones = 0
                for k in range(8):
                    if not mk[i + _DY[k], j + _DX[k]]:
                        ok = 0
                        break
                    bits[k] = 1 if im[i + _DY[k], j + _DX[k]] >= cen else 0
                    ones += bits[k]
                if not ok:
                    continue
                trans = 0
                for k in range(8):
                    trans += 1 if bits[k] != bits[(k + 1) % 8] else 0
                codes[i, j] = ones if trans <= 2 else 9
    return codes_arr
