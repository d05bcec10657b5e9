# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled 2-D convolution kernels (direct loops, NHWC float64).

Inner loops run over the contiguous channel axis for vectorization; outer
loops parallelize over the batch.  Results are bitwise-reproducible for a
fixed thread count (static schedules, fixed reduction order).
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport parallel, prange, threadid

cimport openmp

cnp.import_array()


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   double[::1] b, int stride=1, int pad=0):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], c_in = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], c_out = w.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    out = np.empty((n, ho, wo, c_out))
    cdef double[:, :, :, ::1] y = out
    cdef Py_ssize_t i, r, c, co, ki, kj, ci, ir, ic
    cdef double xv
    for i in prange(n, nogil=True):
        for r in range(ho):
            for c in range(wo):
                for co in range(c_out):
                    y[i, r, c, co] = b[co]
                for ki in range(kh):
                    ir = r * stride + ki - pad
                    if ir < 0 or ir >= h:
                        continue
                    for kj in range(kw):
                        ic = c * stride + kj - pad
                        if ic < 0 or ic >= wd:
                            continue
                        for ci in range(c_in):
                            xv = x[i, ir, ic, ci]
                            for co in range(c_out):
                                y[i, r, c, co] += xv * w[ki, kj, ci, co]
    return out


def conv2d_backward_params(double[:, :, :, ::1] x, double[:, :, :, ::1] dy,
                           int kh, int kw, int stride=1, int pad=0):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], c_in = x.shape[3]
    cdef Py_ssize_t ho = dy.shape[1], wo = dy.shape[2], c_out = dy.shape[3]
    cdef int n_threads = openmp.omp_get_max_threads()
    # per-thread accumulators over the batch, reduced in fixed thread order
    dw_buf_arr = np.zeros((n_threads, kh, kw, c_in, c_out))
    db_buf_arr = np.zeros((n_threads, c_out))
    cdef double[:, :, :, :, ::1] dw = dw_buf_arr
    cdef double[:, ::1] db = db_buf_arr
    cdef Py_ssize_t i, r, c, co, ki, kj, ci, ir, ic
    cdef int t
    cdef double g, xv
    with nogil, parallel():
        t = threadid()
        for i in prange(n, schedule="static"):
            for r in range(ho):
                for c in range(wo):
                    for co in range(c_out):
                        db[t, co] += dy[i, r, c, co]
                    for ki in range(kh):
                        ir = r * stride + ki - pad
                        if ir < 0 or ir >= h:
                            continue
                        for kj in range(kw):
                            ic = c * stride + kj - pad
                            if ic < 0 or ic >= wd:
                                continue
                            for ci in range(c_in):
                                xv = x[i, ir, ic, ci]
                                for co in range(c_out):
                                    dw[t, ki, kj, ci, co] += xv * dy[i, r, c, co]
    return dw_buf_arr.sum(axis=0), db_buf_arr.sum(axis=0)


def conv2d_backward_input(double[:, :, :, ::1] dy, double[:, :, :, ::1] w,
                          int in_h, int in_w, int stride=1, int pad=0):
    cdef Py_ssize_t n = dy.shape[0], ho = dy.shape[1], wo = dy.shape[2], c_out = dy.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], c_in = w.shape[2]
    dx_arr = np.zeros((n, in_h, in_w, c_in))
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, r, c, co, ki, kj, ci, ir, ic
    cdef double acc
    for i in prange(n, nogil=True):
        for r in range(ho):
            for c in range(wo):
                for ki in range(kh):
                    ir = r * stride + ki - pad
                    if ir < 0 or ir >= in_h:
                        continue
                    for kj in range(kw):
                        ic = c * stride + kj - pad
                        if ic < 0 or ic >= in_w:
                            continue
                        for ci in range(c_in):
                            acc = 0.0
                            for co in range(c_out):
                                acc = acc + w[ki, kj, ci, co] * dy[i, r, c, co]
                            dx[i, ir, ic, ci] += acc
    return dx_arr
