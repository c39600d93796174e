# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a pure-Python twin in ``_core_python`` with the same
signature and the same numerical contract; ``_backend`` picks one at import.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport NAN, sqrt

cnp.import_array()


def lag_products(const double[:, ::1] y, Py_ssize_t maxlag):
    """Uncentred lag products ``out[r, h] = sum_i y[r, i] * y[r, i + h]``."""
    cdef Py_ssize_t nrow = y.shape[0], n = y.shape[1]
    cdef Py_ssize_t r, h, i, k, top
    cdef double a0, a1, a2, a3, yi
    if maxlag > n - 1:
        maxlag = n - 1
    out = np.zeros((nrow, maxlag + 1), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for r in range(nrow):
            h = 0
            # four lags per sweep: independent accumulators, one load of y[i]
            while h + 3 <= maxlag:
                a0 = a1 = a2 = a3 = 0.0
                top = n - h - 3
                for i in range(top):
                    yi = y[r, i]
                    a0 += yi * y[r, i + h]
                    a1 += yi * y[r, i + h + 1]
                    a2 += yi * y[r, i + h + 2]
                    a3 += yi * y[r, i + h + 3]
                for i in range(top, n - h):
                    a0 += y[r, i] * y[r, i + h]
                for i in range(top, n - h - 1):
                    a1 += y[r, i] * y[r, i + h + 1]
                for i in range(top, n - h - 2):
                    a2 += y[r, i] * y[r, i + h + 2]
                o[r, h] = a0
                o[r, h + 1] = a1
                o[r, h + 2] = a2
                o[r, h + 3] = a3
                h += 4
            for k in range(h, maxlag + 1):
                a0 = 0.0
                for i in range(n - k):
                    a0 += y[r, i] * y[r, i + k]
                o[r, k] = a0
    return out


def band_cholesky(const double[:, ::1] ab):
    """Lower banded Cholesky factor in LAPACK lower band storage.

    ``ab[k, i]`` holds ``A[i + k, i]``.  Returns ``(factor, info)`` where
    ``info`` is 0 on success and ``j + 1`` if the leading minor of order
    ``j + 1`` is not positive definite.
    """
    cdef Py_ssize_t m = ab.shape[0] - 1, n = ab.shape[1]
    cdef Py_ssize_t j, k, i, top
    cdef double d, s
    out = np.array(ab, dtype=np.float64, copy=True)
    cdef double[:, ::1] L = out
    cdef Py_ssize_t info = 0
    with nogil:
        for j in range(n):
            # L[j, j]
            d = L[0, j]
            top = m if m < j else j
            for k in range(1, top + 1):
                d -= L[k, j - k] * L[k, j - k]
            if d <= 0.0:
                info = j + 1
                break
            d = sqrt(d)
            L[0, j] = d
            # L[j + i, j] for i = 1..m
            for i in range(1, m + 1):
                if j + i >= n:
                    break
                s = L[i, j]
                # sum_k L[j+i, j-k] L[j, j-k], k >= 1, with j-k >= j+i-m
                for k in range(1, m - i + 1):
                    if k > j:
                        break
                    s -= L[i + k, j - k] * L[k, j - k]
                L[i, j] = s / d
    return out, info


def band_lower_matvec(const double[:, ::1] lb, const double[:, ::1] z):
    """Rows of ``x = L z`` for a lower band factor ``lb`` and draws ``z``."""
    cdef Py_ssize_t m = lb.shape[0] - 1, n = lb.shape[1], nrow = z.shape[0]
    cdef Py_ssize_t r, i, k, top
    cdef double acc
    out = np.empty((nrow, n), dtype=np.float64)
    cdef double[:, ::1] x = out
    with nogil:
        for r in range(nrow):
            for i in range(n):
                acc = 0.0
                top = m if m < i else i
                for k in range(top + 1):
                    acc += lb[k, i - k] * z[r, i - k]
                x[r, i] = acc
    return out


def ar1_filter(const double[:, ::1] w, double rho):
    """Recursive filter ``x[t] = w[t] + rho * x[t - 1]`` along each row."""
    cdef Py_ssize_t nrow = w.shape[0], n = w.shape[1], r, t
    cdef double prev
    out = np.empty((nrow, n), dtype=np.float64)
    cdef double[:, ::1] x = out
    with nogil:
        for r in range(nrow):
            prev = 0.0
            for t in range(n):
                prev = w[r, t] + rho * prev
                x[r, t] = prev
    return out


def subsampling_t_rows(const double[:, ::1] y, Py_ssize_t ngroups, double mu0):
    """Subsampling t statistic of each row; NaN where the group spread is zero."""
    cdef Py_ssize_t nrow = y.shape[0], n = y.shape[1], q = n // ngroups
    cdef Py_ssize_t r, g, i
    cdef double gm, tot, ss, mean, dev, s2
    out = np.empty(nrow, dtype=np.float64)
    cdef double[::1] o = out
    means = np.empty(ngroups, dtype=np.float64)
    cdef double[::1] mu = means
    with nogil:
        for r in range(nrow):
            tot = 0.0
            for g in range(ngroups):
                gm = 0.0
                for i in range(g * q, (g + 1) * q):
                    gm += y[r, i]
                gm /= q
                mu[g] = gm
                tot += gm
            mean = tot / ngroups
            ss = 0.0
            for g in range(ngroups):
                dev = mu[g] - mean
                ss += dev * dev
            s2 = ss / (ngroups - 1)
            if s2 > 0.0:
                o[r] = sqrt(<double>ngroups) * (mean - mu0) / sqrt(s2)
            else:
                o[r] = NAN
    return out
