# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled network kernels; loop-level mirror of ``_pure``."""

import numpy as np
from libc.math cimport sin, cos


def power_injections(double[:, ::1] G, double[:, ::1] B,
                     double[::1] theta, double[::1] V):
    cdef Py_ssize_t n = theta.shape[0]
    cdef Py_ssize_t i, j
    cdef double t, c, s, ap, aq
    P = np.empty(n)
    Q = np.empty(n)
    cdef double[::1] Pv = P
    cdef double[::1] Qv = Q
    for i in range(n):
        ap = 0.0
        aq = 0.0
        for j in range(n):
            if G[i, j] == 0.0 and B[i, j] == 0.0:
                continue
            t = theta[i] - theta[j]
            c = cos(t)
            s = sin(t)
            ap += V[j] * (G[i, j] * c + B[i, j] * s)
            aq += V[j] * (G[i, j] * s - B[i, j] * c)
        Pv[i] = V[i] * ap
        Qv[i] = V[i] * aq
    return P, Q


def jacobian_blocks(double[:, ::1] G, double[:, ::1] B,
                    double[::1] theta, double[::1] V):
    cdef Py_ssize_t n = theta.shape[0]
    cdef Py_ssize_t i, j
    cdef double t, c, s, bsgc, aoff
    A = np.zeros((n, n))
    D = np.zeros((n, n))
    E = np.zeros((n, n))
    C = np.zeros((n, n))
    cdef double[:, ::1] Av = A
    cdef double[:, ::1] Dv = D
    cdef double[:, ::1] Ev = E
    cdef double[:, ::1] Cv = C
    for i in range(n):
        Dv[i, i] = 2.0 * G[i, i] * V[i]
        Cv[i, i] = -B[i, i]
        for j in range(n):
            if j == i or (G[i, j] == 0.0 and B[i, j] == 0.0):
                continue
            t = theta[i] - theta[j]
            c = cos(t)
            s = sin(t)
            bsgc = B[i, j] * s + G[i, j] * c
            aoff = V[i] * V[j] * (G[i, j] * s - B[i, j] * c)
            Av[i, j] = aoff
            Av[i, i] -= aoff
            Dv[i, j] = V[i] * bsgc
            Dv[i, i] += V[j] * bsgc
            Ev[i, j] = -V[j] * bsgc
            Ev[i, i] += V[j] * bsgc
            Cv[i, j] = G[i, j] * s - B[i, j] * c
    return A, D, E, C
