"""Test statistics for the mean of a stationary series."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fixsmooth import _backend
from fixsmooth.exceptions import DegenerateLRV, UnequalGroups, ZeroVariance
from fixsmooth.kernels import EigenSystem, KernelSpec, nystrom_eigs, scale

__all__ = [
    "StatResult",
    "subsampling_t",
    "projections",
    "lrv_estimate",
    "lrv_double_sum",
    "wald_F",
    "eigensystem_for",
    "load_series",
]

_LRV_FLOOR = 1e-12


@dataclass(frozen=True)
class StatResult:
    """A statistic together with what it was computed from."""

    statistic: float
    ingredients: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.statistic)


def load_series(path) -> np.ndarray:
    """One value per line; blank lines and ``#`` comments are skipped."""
    vals = [line.split("#", 1)[0].strip() for line in Path(path).read_text().splitlines()]
    return np.array([float(v) for v in vals if v])


def _as_series(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    return x


# ---------------------------------------------------------------------------
# subsampling t
# ---------------------------------------------------------------------------
def subsampling_t(series, K: int, mu0: float = 0.0) -> StatResult:
    """``T_K = sqrt(K) (mean of group means - mu0) / S``.

    Groups are the ``K`` consecutive blocks of length ``T / K``.

    Raises
    ------
    UnequalGroups
        If ``K`` does not divide ``T``.
    ZeroVariance
        If all group means coincide.
    """
    x = _as_series(series)
    T = x.size
    if K < 2:
        raise ValueError("K must be >= 2")
    if T % K:
        raise UnequalGroups(f"K={K} does not divide T={T}")
    means = x.reshape(K, T // K).mean(axis=1)
    centre = means.mean()
    s2 = means.var(ddof=1)
    if not s2 > 1e-300 or np.ptp(means) <= 1e-14 * max(1.0, np.abs(means).max()):
        raise ZeroVariance("group means are all equal")
    stat = np.sqrt(K) * (centre - mu0) / np.sqrt(s2)
    return StatResult(float(stat), {"group_means": means, "S2": float(s2)}, {"T": T, "K": K, "mu0": mu0})


# ---------------------------------------------------------------------------
# projections and LRV
# ---------------------------------------------------------------------------
def basis_on_grid(eig: EigenSystem, T: int, J: int | None = None) -> np.ndarray:
    """``phi_j^0(i/T)``: eigenfunctions on ``i/T`` re-demeaned discretely."""
    phi = eig.evaluate(np.arange(1, T + 1) / T, J)
    return phi - phi.mean(axis=0)


def projections(series, eig: EigenSystem, J: int | None = None, mu0: float | None = None):
    """Return ``(xi_0, xi)`` with ``xi_j = T^{-1/2} sum_i phi_j^0(i/T) X_i``.

    ``xi_0`` is None when ``mu0`` is not given.
    """
    x = _as_series(series)
    T = x.size
    J = eig.J if J is None else J
    if T < J:
        raise ValueError("series shorter than the truncation")
    xi = basis_on_grid(eig, T, J).T @ x / np.sqrt(T)
    xi0 = None if mu0 is None else float(np.sum(x - mu0) / np.sqrt(T))
    return xi0, xi


def lrv_double_sum(series, kernel: KernelSpec) -> float:
    """Direct ``T^{-1} sum_ij G_b(i/T, j/T) e_i e_j`` with ``e`` centred."""
    x = _as_series(series)
    T = x.size
    e = x - x.mean()
    grid = np.arange(1, T + 1) / T
    return float(e @ kernel.base(grid[:, None], grid[None, :]) @ e / T)


def _finish_lrv(value):
    if value <= _LRV_FLOOR:
        raise DegenerateLRV(f"long-run variance estimate {value:.3g} is not positive")
    return value


def lrv_estimate(series, kernel: KernelSpec, b: float | None = None, method: str = "auto") -> float:
    """Kernel long-run variance estimate from centred data.

    Parameters
    ----------
    series : array_like
    kernel : KernelSpec
        Its own bandwidth is used unless ``b`` rescales it.  Demeaning is
        irrelevant here: with centred data the rank-one terms cancel.
    method : {"auto", "lags", "direct"}
        ``lags`` uses weighted sample autocovariances (difference kernels
        only); ``direct`` forms the full quadratic form.
    """
    x = _as_series(series)
    T = x.size
    if T < 8:
        raise ValueError("need T >= 8")
    if b is not None:
        kernel = scale(kernel, b)
    if method == "auto":
        method = "lags" if kernel.is_difference else "direct"
    if method == "direct":
        value = lrv_double_sum(x, kernel)
    elif method == "lags":
        e = x - x.mean()
        h = np.arange(T)
        w = kernel.univariate(h / (kernel.b * T))
        maxlag = int(np.max(np.nonzero(np.abs(w) > 0)[0]))
        s = _backend.lag_products(e[None, :], maxlag)[0]
        value = float((w[0] * s[0] + 2.0 * w[1 : maxlag + 1] @ s[1:]) / T)
    else:
        raise ValueError(f"unknown method {method!r}")
    if -1e-10 <= value < 0:
        value = 0.0
    return _finish_lrv(value)


# ---------------------------------------------------------------------------
# Wald statistic
# ---------------------------------------------------------------------------
def eigensystem_for(kernel: KernelSpec, n: int = 512) -> EigenSystem:
    """Nyström eigensystem with the default truncation, accepting slow tails."""
    return nystrom_eigs(kernel, n=n, allow_coarse=True)


def wald_F(series, kernel: KernelSpec | EigenSystem, K: int | float = np.inf, mu0: float = 0.0, b: float | None = None):
    """``F_T(K) = xi_0^2 / sum_{j<=K} lambda_j xi_j^2``; ``K = inf`` uses the
    kernel LRV estimate as denominator.

    ``kernel`` may be an :class:`EigenSystem` for the finite-``K`` path.
    """
    x = _as_series(series)
    T = x.size
    xi0 = float(np.sum(x - mu0) / np.sqrt(T))
    if np.isinf(K):
        if isinstance(kernel, EigenSystem):
            kernel = kernel.kernel
        if b is not None:
            kernel = scale(kernel, b)
        denom = lrv_estimate(x, kernel)
        return StatResult(xi0**2 / denom, {"xi0": xi0, "D": denom}, {"T": T, "kernel": kernel.name, "K": np.inf, "mu0": mu0})
    eig = kernel if isinstance(kernel, EigenSystem) else eigensystem_for(kernel if b is None else scale(kernel, b))
    K = int(K)
    if K > eig.J:
        raise ValueError(f"truncation K={K} exceeds the eigensystem size {eig.J}")
    _, xi = projections(x, eig, K)
    denom = _finish_lrv(float(eig.eigenvalues[:K] @ xi**2))
    meta = {"T": T, "kernel": eig.kernel.name if eig.kernel else "custom", "K": K, "mu0": mu0}
    return StatResult(xi0**2 / denom, {"xi0": xi0, "xi": xi, "D": denom}, meta)
