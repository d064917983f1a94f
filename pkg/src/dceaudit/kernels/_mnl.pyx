# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled MNL log-likelihood, gradient and Hessian.

Rows of a dummy-coded design are mostly zeros, so each profile row is
compressed to its nonzero entries before the outer products are accumulated.
Sets are reduced strictly in order, which keeps results bit-stable.
"""

import numpy as np
from libc.math cimport exp, log


def loglik_grad_hess(const double[:, :, ::1] X, const long long[::1] chosen,
                     const double[::1] beta, bint want_grad=True, bint want_hess=True):
    cdef Py_ssize_t S = X.shape[0], J = X.shape[1], P = X.shape[2]
    cdef Py_ssize_t s, j, k, a, b, n, c, nt
    cdef double ll = 0.0, m, z, u, pj, v

    if beta.shape[0] != P:
        raise ValueError("beta length does not match design columns")
    if chosen.shape[0] != S:
        raise ValueError("chosen length does not match number of sets")

    grad_arr = np.zeros(P)
    hess_arr = np.zeros((P, P))
    cdef double[::1] grad = grad_arr
    cdef double[:, ::1] hess = hess_arr

    nnz_arr = np.zeros(J, dtype=np.intp)
    idx_arr = np.zeros((J, P), dtype=np.intp)
    val_arr = np.zeros((J, P))
    util_arr = np.zeros(J)
    prob_arr = np.zeros(J)
    xbar_arr = np.zeros(P)
    mark_arr = np.zeros(P, dtype=np.intp)
    touched_arr = np.zeros(P, dtype=np.intp)
    cdef Py_ssize_t[::1] nnz = nnz_arr
    cdef Py_ssize_t[:, ::1] idx = idx_arr
    cdef double[:, ::1] val = val_arr
    cdef double[::1] util = util_arr
    cdef double[::1] prob = prob_arr
    cdef double[::1] xbar = xbar_arr
    cdef Py_ssize_t[::1] mark = mark_arr
    cdef Py_ssize_t[::1] touched = touched_arr

    for s in range(S):
        c = chosen[s]
        if c < 0 or c >= J:
            raise ValueError("chosen index out of range")
        m = -1e308
        for j in range(J):
            n = 0
            u = 0.0
            for k in range(P):
                v = X[s, j, k]
                if v != 0.0:
                    idx[j, n] = k
                    val[j, n] = v
                    n += 1
                    u += v * beta[k]
            nnz[j] = n
            util[j] = u
            if u > m:
                m = u
        z = 0.0
        for j in range(J):
            prob[j] = exp(util[j] - m)
            z += prob[j]
        for j in range(J):
            prob[j] /= z
        ll += util[c] - m - log(z)

        if not (want_grad or want_hess):
            continue

        nt = 0
        for j in range(J):
            pj = prob[j]
            for a in range(nnz[j]):
                k = idx[j, a]
                if mark[k] == 0:
                    mark[k] = 1
                    touched[nt] = k
                    nt += 1
                    xbar[k] = 0.0
                xbar[k] += pj * val[j, a]
        if want_grad:
            for a in range(nnz[c]):
                grad[idx[c, a]] += val[c, a]
            for a in range(nt):
                k = touched[a]
                grad[k] -= xbar[k]
        if want_hess:
            for j in range(J):
                pj = prob[j]
                for a in range(nnz[j]):
                    v = pj * val[j, a]
                    for b in range(nnz[j]):
                        hess[idx[j, a], idx[j, b]] -= v * val[j, b]
            for a in range(nt):
                for b in range(nt):
                    hess[touched[a], touched[b]] += xbar[touched[a]] * xbar[touched[b]]
        for a in range(nt):
            mark[touched[a]] = 0

    return ll, (grad_arr if want_grad else None), (hess_arr if want_hess else None)
