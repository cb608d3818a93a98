# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pairwise propagation kernels.

Same contract as ``spectrumchain._fallback``; see that module for semantics.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log10, pow, sqrt

cnp.import_array()


cdef inline double _rx_dbm(double sx, double sy, double sp, double dx, double dy,
                           double ref_loss, double d0, double exponent,
                           double min_distance) nogil:
    cdef double ex = sx - dx
    cdef double ey = sy - dy
    cdef double d = sqrt(ex * ex + ey * ey)
    if d < min_distance:
        d = min_distance
    return sp - (ref_loss + 10.0 * exponent * log10(d / d0))


def pairwise_rx_dbm(const double[::1] sx, const double[::1] sy, const double[::1] sp,
                    const double[::1] dx, const double[::1] dy,
                    double ref_loss, double d0, double exponent, double min_distance):
    cdef Py_ssize_t ns = sx.shape[0]
    cdef Py_ssize_t nd = dx.shape[0]
    out = np.empty((nd, ns), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(nd):
            for j in range(ns):
                o[i, j] = _rx_dbm(sx[j], sy[j], sp[j], dx[i], dy[i],
                                  ref_loss, d0, exponent, min_distance)
    return out


def aggregate_mw(const double[::1] sx, const double[::1] sy, const double[::1] sp,
                 const long long[::1] s_ch, const long long[::1] s_owner,
                 const double[::1] dx, const double[::1] dy,
                 const long long[::1] d_ch, const long long[::1] d_owner,
                 double ref_loss, double d0, double exponent, double min_distance):
    cdef Py_ssize_t ns = sx.shape[0]
    cdef Py_ssize_t nd = dx.shape[0]
    out = np.zeros(nd, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i, j
    cdef double acc
    with nogil:
        for i in range(nd):
            acc = 0.0
            for j in range(ns):
                if d_ch[i] >= 0 and s_ch[j] != d_ch[i]:
                    continue
                if d_owner[i] >= 0 and s_owner[j] == d_owner[i]:
                    continue
                acc = acc + pow(10.0, _rx_dbm(sx[j], sy[j], sp[j], dx[i], dy[i],
                                              ref_loss, d0, exponent, min_distance) / 10.0)
            o[i] = acc
    return out
