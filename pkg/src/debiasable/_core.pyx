# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled log-domain reductions used by the Sinkhorn solvers and lse costs."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY, isinf

cnp.import_array()


def softmin(const double[:, ::1] cost, const double[::1] h, double eps):
    """out[i] = -eps * log(sum_j exp((h[j] - cost[i, j]) / eps)), +inf if empty."""
    cdef Py_ssize_t n = cost.shape[0], m = cost.shape[1], i, j
    cdef double best, val, acc
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            best = -INFINITY
            for j in range(m):
                val = h[j] - cost[i, j]
                if val > best:
                    best = val
            if isinf(best) and best < 0:
                out[i] = INFINITY
                continue
            acc = 0.0
            for j in range(m):
                val = h[j] - cost[i, j]
                if val > -INFINITY:
                    acc += exp((val - best) / eps)
            out[i] = -(best + eps * log(acc))
    return out_arr


def pairwise_lse(const double[:, ::1] psi_a, const double[:, ::1] psi_b,
                 const double[::1] log_w, double eps):
    """out[i, j] = -eps * log(sum_z exp(log_w[z] - (psi_a[i, z] + psi_b[j, z]) / eps))."""
    cdef Py_ssize_t n = psi_a.shape[0], m = psi_b.shape[0], nz = psi_a.shape[1]
    cdef Py_ssize_t i, j, z
    cdef double best, val, acc
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(m):
                best = -INFINITY
                for z in range(nz):
                    val = log_w[z] - (psi_a[i, z] + psi_b[j, z]) / eps
                    if val > best:
                        best = val
                if isinf(best) and best < 0:
                    out[i, j] = INFINITY
                    continue
                acc = 0.0
                for z in range(nz):
                    val = log_w[z] - (psi_a[i, z] + psi_b[j, z]) / eps
                    if val > -INFINITY:
                        acc += exp(val - best)
                out[i, j] = -eps * (best + log(acc))
    return out_arr
