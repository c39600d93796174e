"""Gaussian dependent bootstrap with a Bartlett-tapered covariance estimate.

Bootstrap series are drawn from ``N(0, Xi)``, where ``Xi`` is the ``T x T``
Toeplitz matrix with entries ``(1 - |i-j|/l)_+ gamma_hat(|i-j|)`` and
``gamma_hat`` uses the ``1/T`` divisor.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fixsmooth import _backend
from fixsmooth.distributions import block_rng, block_spans
from fixsmooth.exceptions import NotPSD, TooManyDegenerate, UnequalGroups
from fixsmooth.kernels import KernelSpec, scale
from fixsmooth.models import group_covariance_from_autocov
from fixsmooth.statistics import StatResult, subsampling_t, wald_F

__all__ = [
    "SubsamplingT",
    "WaldF",
    "TaperedCovariance",
    "BootstrapOutcome",
    "default_taper",
    "tapered_cov",
    "resample",
    "bootstrap_distribution",
    "bootstrap_test",
    "critical_value",
    "write_outcome_csv",
]

_DEGENERATE_CAP = 0.01
_STREAM = 0xB007


def default_taper(T: int) -> int:
    """``ceil(1.5 T^{1/4})``, capped at ``T``."""
    return min(T, math.ceil(1.5 * T**0.25))


# ---------------------------------------------------------------------------
# statistic specifications
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SubsamplingT:
    """The subsampling t statistic with ``K`` groups."""

    K: int

    def observed(self, series, mu0) -> StatResult:
        return subsampling_t(series, self.K, mu0)

    def rows(self, y):
        return _backend.subsampling_t_rows(np.ascontiguousarray(y), self.K, 0.0)

    @property
    def label(self):
        return f"T_K(K={self.K})"


@dataclass(frozen=True)
class WaldF:
    """``F_T(inf) = xi_0^2 / D_hat`` with a difference kernel at bandwidth ``b``."""

    kernel: KernelSpec
    b: float = 1.0

    @property
    def scaled(self) -> KernelSpec:
        return scale(self.kernel, self.b)

    def observed(self, series, mu0) -> StatResult:
        return wald_F(series, self.scaled, np.inf, mu0)

    def rows(self, y):
        y = np.asarray(y, dtype=float)
        T = y.shape[1]
        k = self.scaled
        w = k.univariate(np.arange(T) / (k.b * T))
        maxlag = int(np.max(np.nonzero(np.abs(w) > 0)[0]))
        e = np.ascontiguousarray(y - y.mean(axis=1, keepdims=True))
        s = _backend.lag_products(e, maxlag)
        D = (w[0] * s[:, 0] + 2.0 * s[:, 1:] @ w[1 : maxlag + 1]) / T
        xi0 = y.sum(axis=1) / np.sqrt(T)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = xi0**2 / D
        out[~(D > 1e-12)] = np.nan
        return out

    @property
    def label(self):
        return f"F_T({self.kernel.form},b={self.b:g})"


# ---------------------------------------------------------------------------
# tapered covariance
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class TaperedCovariance:
    """Banded Toeplitz covariance ``omega_l(h) gamma_hat(h)``, factorized.

    ``gamma`` holds the tapered autocovariances for lags ``0..l-1`` and
    ``factor`` the lower band Cholesky factor in LAPACK band storage.
    """

    T: int
    l: int
    gamma: np.ndarray
    factor: np.ndarray = field(repr=False)
    ridge: float = 0.0

    def matrix(self) -> np.ndarray:
        idx = np.abs(np.subtract.outer(np.arange(self.T), np.arange(self.T)))
        out = np.zeros((self.T, self.T))
        band = idx < self.l
        out[band] = self.gamma[idx[band]]
        return out

    def group_covariance(self, K: int) -> np.ndarray:
        """Exact covariance of ``sqrt(T/K)`` times the bootstrap group means."""
        return group_covariance_from_autocov(self.gamma, K, self.T // K)


def sample_autocov(series, maxlag: int) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    e = x - x.mean()
    return _backend.lag_products(e[None, :], maxlag)[0] / x.size


def tapered_cov(series, l: int | None = None) -> TaperedCovariance:
    """Bartlett-tapered covariance estimate of a series.

    Raises
    ------
    NotPSD
        If the band factorization fails even after adding a ridge of
        ``1e-10 gamma_hat(0)`` to the diagonal.
    """
    x = np.asarray(series, dtype=float)
    T = x.size
    l = default_taper(T) if l is None else int(l)
    if not 1 <= l <= T:
        raise ValueError("need 1 <= l <= T")
    gam = sample_autocov(x, l - 1) * (1.0 - np.arange(l) / l)
    ab = np.zeros((l, T))
    for k in range(l):
        ab[k, : T - k] = gam[k]
    factor, info = _backend.band_cholesky(ab)
    ridge = 0.0
    if info != 0:
        ridge = 1e-10 * gam[0]
        ab[0] += ridge
        factor, info = _backend.band_cholesky(ab)
        if info != 0 or not gam[0] > 0:
            raise NotPSD(f"tapered covariance is not positive definite (l={l}, T={T})")
    return TaperedCovariance(T, l, gam, factor, ridge)


def resample(cov: TaperedCovariance, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Exact Gaussian draw(s) from ``N(0, Xi)``; ``O(T l)`` per draw."""
    n = 1 if size is None else int(size)
    out = _backend.band_lower_matvec(cov.factor, rng.standard_normal((n, cov.T)))
    return out[0] if size is None else out


# ---------------------------------------------------------------------------
# bootstrap distribution
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BootstrapOutcome:
    """Bootstrap sample of a statistic with derived critical values."""

    reps: int
    statistics: np.ndarray
    critical_values: dict
    seed: int
    p_value: float | None = None
    observed: float | None = None
    redraws: int = 0
    method: str = "series"

    def __post_init__(self):
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p-value outside [0, 1]")


def critical_value(abs_sorted: np.ndarray, alpha: float) -> float:
    """Order statistic of ``|stat*|`` at rank ``ceil((1 - alpha)(reps + 1))``."""
    n = abs_sorted.size
    rank = min(n, max(1, math.ceil((1.0 - alpha) * (n + 1) - 1e-9)))
    return float(abs_sorted[rank - 1])


def p_value(abs_stats: np.ndarray, observed: float) -> float:
    return float((1 + np.sum(abs_stats >= abs(observed))) / (abs_stats.size + 1))


def _group_draws(cov, K, rng, n):
    """Bootstrap ``T_K*`` from exact Gaussian group means."""
    sig = cov.group_covariance(K)
    w, v = np.linalg.eigh(sig)
    root = v * np.sqrt(np.clip(w, 0.0, None))
    means = rng.standard_normal((n, K)) @ root.T
    centre = means.mean(axis=1)
    s2 = means.var(axis=1, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(K) * centre / np.sqrt(s2)
    out[~(s2 > 1e-300)] = np.nan
    return out


def _draw(statistic, cov, method, rng, n):
    if method == "group":
        return _group_draws(cov, statistic.K, rng, n)
    return statistic.rows(resample(cov, rng, n))


def bootstrap_distribution(
    series,
    statistic,
    l: int | None = None,
    reps: int = 999,
    seed: int | None = None,
    alphas=(0.01, 0.05, 0.1),
    method: str = "auto",
    key=(),
) -> BootstrapOutcome:
    """Bootstrap distribution of ``T_K*`` or ``F_T*(inf)`` under ``mu0* = 0``.

    Parameters
    ----------
    statistic : SubsamplingT or WaldF
    method : {"auto", "series", "group"}
        ``series`` draws whole bootstrap series.  ``group`` (subsampling t
        only) draws the ``K`` group means directly from their exact Gaussian
        law under ``Xi``, which is equivalent in distribution and far cheaper.
        ``auto`` picks ``group`` when available.

    Replications whose statistic is undefined are redrawn from a separate
    stream; more than 1% of ``reps`` raises :class:`TooManyDegenerate`.
    """
    if seed is None:
        raise ValueError("a seed is required")
    if reps < 999:
        raise ValueError("reps must be >= 999")
    x = np.asarray(series, dtype=float)
    cov = tapered_cov(x, l)
    if method == "auto":
        method = "group" if isinstance(statistic, SubsamplingT) else "series"
    if method == "group" and not isinstance(statistic, SubsamplingT):
        raise ValueError("the group method applies to the subsampling t statistic only")
    if isinstance(statistic, SubsamplingT) and x.size % statistic.K:
        raise UnequalGroups(f"K={statistic.K} does not divide T={x.size}")

    stats = np.empty(reps)
    for b, start, stop in block_spans(reps):
        stats[start:stop] = _draw(statistic, cov, method, block_rng(seed, b, (_STREAM, *key)), stop - start)
    bad = np.nonzero(~np.isfinite(stats))[0]
    redraws = 0
    spare = block_rng(seed, 0, (_STREAM, *key, 1))
    cap = int(_DEGENERATE_CAP * reps)
    for i in bad:
        while True:
            redraws += 1
            if redraws > cap:
                raise TooManyDegenerate(f"{redraws} degenerate bootstrap replications (cap {cap})")
            val = _draw(statistic, cov, method, spare, 1)[0]
            if np.isfinite(val):
                stats[i] = val
                break
    abs_sorted = np.sort(np.abs(stats))
    crit = {float(a): critical_value(abs_sorted, a) for a in alphas}
    return BootstrapOutcome(reps, np.sort(stats), crit, int(seed), redraws=redraws, method=method)


def bootstrap_test(
    series,
    mu0: float,
    statistic,
    alpha: float = 0.05,
    l: int | None = None,
    reps: int = 999,
    seed: int | None = None,
    method: str = "auto",
    key=(),
):
    """Bootstrap test of ``H0: mu = mu0``.

    Returns
    -------
    reject : bool
    p_value : float
    outcome : BootstrapOutcome
    """
    obs = statistic.observed(series, mu0).statistic
    out = bootstrap_distribution(series, statistic, l, reps, seed, (alpha,), method, key)
    pv = p_value(np.abs(out.statistics), obs)
    outcome = BootstrapOutcome(
        out.reps, out.statistics, out.critical_values, out.seed, pv, float(obs), out.redraws, out.method
    )
    return bool(abs(obs) > out.critical_values[float(alpha)]), pv, outcome


def write_outcome_csv(outcome: BootstrapOutcome, path, summary_path=None):
    """Write ``rep, statistic`` rows and, optionally, an ``alpha, critical_value, p_value`` summary."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rep", "statistic"])
        for i, s in enumerate(outcome.statistics):
            w.writerow([i, repr(float(s))])
    if summary_path is not None:
        with Path(summary_path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "critical_value", "p_value"])
            for a, c in sorted(outcome.critical_values.items()):
                w.writerow([a, repr(c), "" if outcome.p_value is None else repr(outcome.p_value)])
