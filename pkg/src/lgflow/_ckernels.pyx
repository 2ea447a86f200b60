# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: orthant MV-KS statistics and the LG-LDM mean recursion."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


cdef double _orthant_ks(const double[:, ::1] x, const double[::1] ref,
                        Py_ssize_t start, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, j, c
    cdef Py_ssize_t n_le, n_eq
    cdef bint le, eq
    cdef double xi, xj, f, dev
    cdef double best = 0.0
    cdef double inv_n = 1.0 / n
    for i in range(start, start + n):
        n_le = 0
        n_eq = 0
        for j in range(start, start + n):
            le = True
            eq = True
            for c in range(d):
                xi = x[i, c]
                xj = x[j, c]
                if xj > xi:
                    le = False
                    break
                if xj != xi:
                    eq = False
            if le:
                n_le += 1
                if eq:
                    n_eq += 1
        f = ref[i]
        dev = fabs(n_le * inv_n - f)
        if dev > best:
            best = dev
        dev = fabs((n_le - n_eq) * inv_n - f)
        if dev > best:
            best = dev
    return best


def orthant_ks(const double[:, ::1] x, const double[::1] ref):
    return _orthant_ks(x, ref, 0, x.shape[0])


def window_ks(const double[:, ::1] x, const double[::1] ref, Py_ssize_t w,
              Py_ssize_t stride):
    cdef Py_ssize_t n_win = (x.shape[0] - w) // stride + 1
    out = np.empty(n_win, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t m
    with nogil:
        for m in range(n_win):
            o[m] = _orthant_ks(x, ref, m * stride, w)
    return out


def affine_recursion(const double[:, ::1] A, const double[::1] b,
                     const double[::1] mu0, Py_ssize_t n):
    cdef Py_ssize_t D = A.shape[0]
    out = np.empty((n, D), dtype=np.float64)
    cdef double[:, ::1] mu = out
    cdef Py_ssize_t t, r, c
    cdef double acc
    for c in range(D):
        mu[0, c] = mu0[c]
    with nogil:
        for t in range(1, n):
            for r in range(D):
                acc = b[r]
                for c in range(D):
                    acc = acc + A[r, c] * mu[t - 1, c]
                mu[t, r] = acc
    return out


def adjoint_recursion(const double[:, ::1] A, const double[:, ::1] g):
    cdef Py_ssize_t n = g.shape[0]
    cdef Py_ssize_t D = g.shape[1]
    out = np.empty((n, D), dtype=np.float64)
    cdef double[:, ::1] lam = out
    cdef Py_ssize_t t, r, c
    cdef double acc
    if n == 0:
        return out
    for c in range(D):
        lam[n - 1, c] = g[n - 1, c]
    with nogil:
        for t in range(n - 2, -1, -1):
            for c in range(D):
                acc = g[t, c]
                for r in range(D):
                    acc = acc + A[r, c] * lam[t + 1, r]
                lam[t, c] = acc
    return out
