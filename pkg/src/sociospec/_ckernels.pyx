# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the embedding-projection hot kernels.

Mirrors `_kernels_py` exactly; the parity tests enforce agreement.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log

BACKEND = "compiled"

cdef double _EPS = 1e-12


def pairwise_sq_dists(cnp.ndarray[cnp.float64_t, ndim=2] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, n))
    cdef double[:, :] xv = x
    cdef double[:, :] ov = out
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                diff = xv[i, k] - xv[j, k]
                acc += diff * diff
            ov[i, j] = acc
            ov[j, i] = acc
    return out


def affinity_search(cnp.ndarray[cnp.float64_t, ndim=2] dists, double perplexity,
                    double tol=1e-5, int max_iter=100):
    cdef Py_ssize_t n = dists.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] p = np.zeros((n, n))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.zeros(n)
    cdef double[:, :] dv = dists
    cdef double[:, :] pv = p
    cdef double[:] wv = w
    cdef double target = log(perplexity)
    cdef Py_ssize_t i, j
    cdef int it
    cdef double beta, lo, hi, s, sd, h
    cdef bint hi_set
    for i in range(n):
        beta = 1.0
        lo = 0.0
        hi = 0.0
        hi_set = False
        s = 0.0
        for it in range(max_iter):
            s = 0.0
            sd = 0.0
            for j in range(n):
                if j == i:
                    wv[j] = 0.0
                    continue
                wv[j] = exp(-dv[i, j] * beta)
                s += wv[j]
                sd += dv[i, j] * wv[j]
            if s <= 0.0:
                for j in range(n):
                    wv[j] = 0.0 if j == i else _EPS
                s = _EPS * (n - 1)
                sd = 0.0
                for j in range(n):
                    sd += dv[i, j] * wv[j]
            h = log(s) + beta * sd / s
            if fabs(h - target) < tol:
                break
            if h > target:
                lo = beta
                if hi_set:
                    beta = 0.5 * (beta + hi)
                else:
                    beta = beta * 2.0
            else:
                hi = beta
                hi_set = True
                beta = 0.5 * (beta + lo)
        for j in range(n):
            pv[i, j] = wv[j] / s
    return p


def tsne_gradient(cnp.ndarray[cnp.float64_t, ndim=2] p,
                  cnp.ndarray[cnp.float64_t, ndim=2] y):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] grad = np.zeros((n, d))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] num = np.zeros((n, n))
    cdef double[:, :] pv = p
    cdef double[:, :] yv = y
    cdef double[:, :] gv = grad
    cdef double[:, :] nv = num
    cdef Py_ssize_t i, j, k
    cdef double acc, diff, zsum, q, coef, kl
    zsum = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                diff = yv[i, k] - yv[j, k]
                acc += diff * diff
            acc = 1.0 / (1.0 + acc)
            nv[i, j] = acc
            nv[j, i] = acc
            zsum += 2.0 * acc
    if zsum < _EPS:
        zsum = _EPS
    kl = 0.0
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            q = nv[i, j] / zsum
            if q < _EPS:
                q = _EPS
            coef = 4.0 * (pv[i, j] - q) * nv[i, j]
            for k in range(d):
                gv[i, k] += coef * (yv[i, k] - yv[j, k])
            if pv[i, j] > 0.0:
                kl += pv[i, j] * log(pv[i, j] / q)
    return grad, kl
