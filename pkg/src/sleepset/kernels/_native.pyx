# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in pyref.py.

Direct triple loops with a contiguous innermost time axis; the C compiler
vectorises the inner accumulation. These beat the GEMM formulation when the
channel product is small (the common case for the scaled-down configs), and
lose to BLAS for wide layers, so the dispatcher in `sleepset.kernels` only
routes small problems here.
"""

import numpy as np

cimport numpy as cnp

ctypedef fused real:
    float
    double


def conv1d_forward(real[:, :, ::1] x, real[:, :, ::1] w, real[::1] b, int dilation):
    cdef Py_ssize_t batch = x.shape[0], c_in = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t c_out = w.shape[0], kernel = w.shape[2]
    cdef Py_ssize_t pad = (kernel - 1) // 2 * dilation
    cdef Py_ssize_t bi, co, ci, t, l, lo, hi, off
    cdef real wv

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    y_arr = np.empty((batch, c_out, length), dtype=dtype)
    cdef real[:, :, ::1] y = y_arr

    for bi in range(batch):
        for co in range(c_out):
            for l in range(length):
                y[bi, co, l] = b[co]
            for ci in range(c_in):
                for t in range(kernel):
                    off = t * dilation - pad
                    wv = w[co, ci, t]
                    lo = -off if off < 0 else 0
                    hi = length - off if off > 0 else length
                    for l in range(lo, hi):
                        y[bi, co, l] += wv * x[bi, ci, l + off]
    return y_arr


def conv1d_backward_input(real[:, :, ::1] gy, real[:, :, ::1] w, int dilation):
    cdef Py_ssize_t batch = gy.shape[0], c_out = gy.shape[1], length = gy.shape[2]
    cdef Py_ssize_t c_in = w.shape[1], kernel = w.shape[2]
    cdef Py_ssize_t pad = (kernel - 1) // 2 * dilation
    cdef Py_ssize_t bi, co, ci, t, l, lo, hi, off
    cdef real wv

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gx_arr = np.zeros((batch, c_in, length), dtype=dtype)
    cdef real[:, :, ::1] gx = gx_arr

    # correlation transpose: gx[l + off] += w * gy[l]  <=>  gx[l] += w * gy[l - off]
    for bi in range(batch):
        for ci in range(c_in):
            for co in range(c_out):
                for t in range(kernel):
                    off = t * dilation - pad
                    wv = w[co, ci, t]
                    lo = off if off > 0 else 0
                    hi = length + off if off < 0 else length
                    for l in range(lo, hi):
                        gx[bi, ci, l] += wv * gy[bi, co, l - off]
    return gx_arr


def conv1d_backward_weights(real[:, :, ::1] gy, real[:, :, ::1] x, int kernel, int dilation):
    cdef Py_ssize_t batch = x.shape[0], c_in = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t c_out = gy.shape[1]
    cdef Py_ssize_t pad = (kernel - 1) // 2 * dilation
    cdef Py_ssize_t bi, co, ci, t, l, lo, hi, off
    cdef real acc

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gw_arr = np.zeros((c_out, c_in, kernel), dtype=dtype)
    gb_arr = np.zeros(c_out, dtype=dtype)
    cdef real[:, :, ::1] gw = gw_arr
    cdef real[::1] gb = gb_arr

    for co in range(c_out):
        for ci in range(c_in):
            for t in range(kernel):
                off = t * dilation - pad
                lo = -off if off < 0 else 0
                hi = length - off if off > 0 else length
                acc = 0
                for bi in range(batch):
                    for l in range(lo, hi):
                        acc += gy[bi, co, l] * x[bi, ci, l + off]
                gw[co, ci, t] = acc
    for bi in range(batch):
        for co in range(c_out):
            acc = 0
            for l in range(length):
                acc += gy[bi, co, l]
            gb[co] += acc
    return gw_arr, gb_arr


def maxpool2_forward(real[:, :, ::1] x):
    cdef Py_ssize_t batch = x.shape[0], channels = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t half = length // 2
    cdef Py_ssize_t bi, c, l

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    y_arr = np.empty((batch, channels, half), dtype=dtype)
    idx_arr = np.empty((batch, channels, half), dtype=np.int8)
    cdef real[:, :, ::1] y = y_arr
    cdef signed char[:, :, ::1] idx = idx_arr

    for bi in range(batch):
        for c in range(channels):
            for l in range(half):
                if x[bi, c, 2 * l] >= x[bi, c, 2 * l + 1]:
                    y[bi, c, l] = x[bi, c, 2 * l]
                    idx[bi, c, l] = 0
                else:
                    y[bi, c, l] = x[bi, c, 2 * l + 1]
                    idx[bi, c, l] = 1
    return y_arr, idx_arr


def maxpool2_backward(real[:, :, ::1] gy, signed char[:, :, ::1] idx):
    cdef Py_ssize_t batch = gy.shape[0], channels = gy.shape[1], half = gy.shape[2]
    cdef Py_ssize_t bi, c, l

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gx_arr = np.zeros((batch, channels, half * 2), dtype=dtype)
    cdef real[:, :, ::1] gx = gx_arr

    for bi in range(batch):
        for c in range(channels):
            for l in range(half):
                gx[bi, c, 2 * l + idx[bi, c, l]] = gy[bi, c, l]
    return gx_arr
