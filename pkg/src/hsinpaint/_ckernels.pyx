# cython: language_level=3
"""Compiled versions of the hot kernels in ``_pykernels``.

Convolutions gather the padded input into an im2col matrix in a typed loop and
hand the contraction to BLAS; the adjoint scatters back with col2im. The NLM
affinity is a direct loop over the search window.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef inline Py_ssize_t _out_size(Py_ssize_t n, Py_ssize_t k, Py_ssize_t stride):
    return (n + 2 * (k // 2) - k) // stride + 1


cdef _im2col(double[:, :, ::1] xp, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t C = xp.shape[0]
    cols = np.empty((C * k * k, ho * wo))
    cdef double[:, ::1] cv = cols
    cdef Py_ssize_t c, a, b, i, j, r
    with nogil:
        for c in range(C):
            for a in range(k):
                for b in range(k):
                    r = (c * k + a) * k + b
                    for i in range(ho):
                        for j in range(wo):
                            cv[r, i * wo + j] = xp[c, i * stride + a, j * stride + b]
    return cols


def conv2d(x, w, Py_ssize_t stride=1):
    wa = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t O = wa.shape[0], k = wa.shape[2], pad = k // 2
    xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t H = xa.shape[1], W = xa.shape[2]
    cdef Py_ssize_t ho = _out_size(H, k, stride), wo = _out_size(W, k, stride)
    xp = np.pad(xa, ((0, 0), (pad, pad), (pad, pad))) if pad else xa
    cols = _im2col(xp, k, stride, ho, wo)
    return (wa.reshape(O, -1) @ cols).reshape(O, ho, wo)


def conv2d_grad_input(gy, w, Py_ssize_t stride, Py_ssize_t height, Py_ssize_t width):
    ga = np.ascontiguousarray(gy, dtype=np.float64)
    wa = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t O = wa.shape[0], C = wa.shape[1], k = wa.shape[2], pad = k // 2
    cdef Py_ssize_t ho = ga.shape[1], wo = ga.shape[2]
    dcols = np.ascontiguousarray(wa.reshape(O, -1).T @ ga.reshape(O, -1))
    cdef double[:, ::1] dv = dcols
    buf = np.zeros((C, height + 2 * pad, width + 2 * pad))
    cdef double[:, :, ::1] xv = buf
    cdef Py_ssize_t c, a, b, i, j, r
    with nogil:
        for c in range(C):
            for a in range(k):
                for b in range(k):
                    r = (c * k + a) * k + b
                    for i in range(ho):
                        for j in range(wo):
                            xv[c, i * stride + a, j * stride + b] += dv[r, i * wo + j]
    if pad == 0:
        return buf
    return np.ascontiguousarray(buf[:, pad:pad + height, pad:pad + width])


def conv2d_grad_weight(x, gy, Py_ssize_t k, Py_ssize_t stride=1):
    cdef Py_ssize_t pad = k // 2
    xa = np.ascontiguousarray(x, dtype=np.float64)
    ga = np.ascontiguousarray(gy, dtype=np.float64)
    cdef Py_ssize_t O = ga.shape[0], ho = ga.shape[1], wo = ga.shape[2]
    xp = np.pad(xa, ((0, 0), (pad, pad), (pad, pad))) if pad else xa
    cols = _im2col(xp, k, stride, ho, wo)
    return (ga.reshape(O, -1) @ cols.T).reshape(O, xa.shape[0], k, k)


def nlm_affinity(guide, Py_ssize_t patch_radius, Py_ssize_t search_radius, double h):
    g = np.ascontiguousarray(guide, dtype=np.float64)
    cdef Py_ssize_t r = patch_radius
    cdef double[:, :, ::1] gp = np.pad(g, ((0, 0), (r, r), (r, r)), mode="symmetric")
    cdef Py_ssize_t ch = g.shape[0], rows = g.shape[1], cols = g.shape[2]
    cdef Py_ssize_t n = rows * cols, s = search_radius
    out = np.zeros((n, n))
    cdef double[:, ::1] ov = out
    cdef double inv_h2 = 1.0 / (h * h)
    cdef Py_ssize_t i1, j1, i2, j2, dr, dc, c, a, b
    cdef double d, t
    with nogil:
        for i1 in range(rows):
            for j1 in range(cols):
                for dr in range(-s, s + 1):
                    i2 = i1 + dr
                    if i2 < 0 or i2 >= rows:
                        continue
                    for dc in range(-s, s + 1):
                        j2 = j1 + dc
                        if j2 < 0 or j2 >= cols:
                            continue
                        d = 0.0
                        for c in range(ch):
                            for a in range(2 * r + 1):
                                for b in range(2 * r + 1):
                                    t = gp[c, i1 + a, j1 + b] - gp[c, i2 + a, j2 + b]
                                    d += t * t
                        ov[i1 * cols + j1, i2 * cols + j2] = exp(-d * inv_h2)
    return out
