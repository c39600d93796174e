"""Pure-Python (numpy/scipy) versions of the compiled inner loops.

Signatures and return conventions mirror ``_core.pyx`` exactly.
"""
import numpy as np
from scipy import signal
from scipy.linalg import lapack


def lag_products(y, maxlag):
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = y.shape[1]
    maxlag = min(int(maxlag), n - 1)
    out = np.empty((y.shape[0], maxlag + 1))
    for h in range(maxlag + 1):
        out[:, h] = np.einsum("ij,ij->i", y[:, : n - h], y[:, h:])
    return out


def band_cholesky(ab):
    ab = np.ascontiguousarray(ab, dtype=np.float64)
    factor, info = lapack.dpbtrf(ab, lower=1)
    return np.ascontiguousarray(factor), int(info)


def band_lower_matvec(lb, z):
    lb = np.asarray(lb, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    m = lb.shape[0] - 1
    n = lb.shape[1]
    out = lb[0] * z
    for k in range(1, min(m, n - 1) + 1):
        out[:, k:] += lb[k, : n - k] * z[:, : n - k]
    return out


def ar1_filter(w, rho):
    w = np.asarray(w, dtype=np.float64)
    return signal.lfilter([1.0], [1.0, -float(rho)], w, axis=1)


def subsampling_t_rows(y, ngroups, mu0):
    y = np.asarray(y, dtype=np.float64)
    q = y.shape[1] // ngroups
    means = y[:, : q * ngroups].reshape(y.shape[0], ngroups, q).mean(axis=2)
    centre = means.mean(axis=1)
    s2 = means.var(axis=1, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(ngroups) * (centre - mu0) / np.sqrt(s2)
    out[~(s2 > 0)] = np.nan
    return out
