"""Stationary Gaussian processes specified through their autocovariances."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from fixsmooth import _backend
from fixsmooth.distributions import block_rng, block_spans
from fixsmooth.exceptions import FactorizationFailure, NonPositiveLRV

__all__ = [
    "ProcessModel",
    "GroupCovariance",
    "autocov",
    "lrv",
    "weighted_moment",
    "group_mean_covariance",
    "group_covariance_from_autocov",
    "simulate",
    "load_custom_autocov",
]

_LRV_FLOOR = 1e-12
_KINDS = ("iid", "ar1", "ma1", "arma11", "custom")


@dataclass(frozen=True)
class ProcessModel:
    """Stationary Gaussian process, immutable and hashable.

    Built-ins are members of the ARMA(1,1) family
    ``X_t = rho X_{t-1} + e_t + theta e_{t-1}`` with ``Var(e_t) = variance``;
    ``custom`` holds a finitely supported table ``gamma(0..H)``.
    Use the classmethod constructors rather than the raw initialiser.
    """

    kind: str
    rho: float = 0.0
    theta: float = 0.0
    variance: float = 1.0
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not abs(self.rho) < 1.0:
            raise ValueError("AR coefficient must satisfy |rho| < 1")
        if self.kind == "custom":
            if len(self.table) == 0 or self.table[0] <= 0:
                raise ValueError("custom autocovariance needs gamma(0) > 0")
        elif self.variance <= 0:
            raise ValueError("innovation variance must be positive")
        if self.lrv() <= _LRV_FLOOR:
            raise NonPositiveLRV(f"long-run variance {self.lrv():.3g} is not positive")

    # constructors -----------------------------------------------------------
    @classmethod
    def iid(cls, variance=1.0):
        return cls("iid", variance=float(variance))

    @classmethod
    def ar1(cls, rho, variance=1.0):
        return cls("ar1", rho=float(rho), variance=float(variance))

    @classmethod
    def ma1(cls, theta, variance=1.0):
        return cls("ma1", theta=float(theta), variance=float(variance))

    @classmethod
    def arma11(cls, rho, theta, variance=1.0):
        return cls("arma11", rho=float(rho), theta=float(theta), variance=float(variance))

    @classmethod
    def custom(cls, table):
        table = tuple(float(v) for v in np.trim_zeros(np.asarray(table, dtype=float), "b"))
        return cls("custom", table=table)

    @classmethod
    def parse(cls, text: str) -> "ProcessModel":
        """Parse ``iid[:VAR]``, ``ar1:RHO[:VAR]``, ``ma1:THETA[:VAR]``,
        ``arma11:RHO:THETA[:VAR]`` or ``custom:PATH``."""
        name, _, rest = text.strip().partition(":")
        name = name.lower()
        if name == "custom":
            return cls.custom(load_custom_autocov(rest))
        args = [float(a) for a in rest.split(":")] if rest else []
        nparams = {"iid": 0, "ar1": 1, "ma1": 1, "arma11": 2}.get(name)
        if nparams is None or not nparams <= len(args) <= nparams + 1:
            raise ValueError(f"cannot parse model {text!r}")
        return getattr(cls, name)(*args)

    def __str__(self):
        if self.kind == "custom":
            return f"custom[{len(self.table)}]"
        params = {"iid": (), "ar1": (self.rho,), "ma1": (self.theta,), "arma11": (self.rho, self.theta)}[self.kind]
        return ":".join([self.kind, *(f"{p:g}" for p in params), f"{self.variance:g}"])

    # population quantities ---------------------------------------------------
    @property
    def support(self):
        """Largest lag with nonzero autocovariance, ``None`` if unbounded."""
        if self.kind == "custom":
            return len(self.table) - 1
        if self.kind == "iid":
            return 0
        if self.rho == 0.0:
            return 1 if self.theta != 0.0 else 0
        return None

    def _gamma01(self):
        r, t, s2 = self.rho, self.theta, self.variance
        g0 = s2 * (1.0 + 2.0 * r * t + t * t) / (1.0 - r * r)
        g1 = s2 * (1.0 + r * t) * (r + t) / (1.0 - r * r)
        return g0, g1

    def autocov(self, h) -> float:
        h = abs(int(h))
        if self.kind == "custom":
            return self.table[h] if h < len(self.table) else 0.0
        g0, g1 = self._gamma01()
        if h == 0:
            return g0
        return g1 * self.rho ** (h - 1)

    def autocov_array(self, maxlag: int) -> np.ndarray:
        """``gamma(0), ..., gamma(maxlag)``."""
        h = np.arange(maxlag + 1)
        if self.kind == "custom":
            out = np.zeros(maxlag + 1)
            n = min(len(self.table), maxlag + 1)
            out[:n] = self.table[:n]
            return out
        g0, g1 = self._gamma01()
        out = np.empty(maxlag + 1)
        out[0] = g0
        if maxlag >= 1:
            out[1:] = g1 * self.rho ** (h[1:] - 1.0)
        return out

    def effective_support(self, limit: int, tol: float = 1e-16) -> int:
        """Lag beyond which the absolute autocovariance tail is below
        ``tol * gamma(0)`` (capped at ``limit``)."""
        if self.support is not None:
            return min(self.support, limit)
        g0, g1 = self._gamma01()
        r = abs(self.rho)
        if g1 == 0.0:
            return 0
        # tail sum_{h > H} |g1| r^{h-1} = |g1| r^H / (1 - r)
        need = np.log(tol * g0 * (1.0 - r) / abs(g1)) / np.log(r)
        return int(min(limit, max(1, np.ceil(need))))

    def lrv(self) -> float:
        if self.kind == "custom":
            tab = np.asarray(self.table)
            return float(tab[0] + 2.0 * tab[1:].sum())
        return self.variance * (1.0 + self.theta) ** 2 / (1.0 - self.rho) ** 2

    def weighted_moment(self, q: int) -> float:
        """``W_q = sum_h |h|^q gamma(h)`` for ``q`` in {1, 2}."""
        if q not in (1, 2):
            raise ValueError("q must be 1 or 2")
        if self.kind == "custom":
            tab = np.asarray(self.table)
            h = np.arange(len(tab))
            return float(2.0 * np.sum(h[1:] ** q * tab[1:]))
        _, g1 = self._gamma01()
        r = self.rho
        if q == 1:
            return 2.0 * g1 / (1.0 - r) ** 2
        return 2.0 * g1 * (1.0 + r) / (1.0 - r) ** 3

    @property
    def sigma2(self) -> float:
        return self.lrv()

    @property
    def B(self) -> float:
        return self.weighted_moment(1)


def autocov(model: ProcessModel, h: int) -> float:
    return model.autocov(h)


def lrv(model: ProcessModel) -> float:
    return model.lrv()


def weighted_moment(model: ProcessModel, q: int) -> float:
    return model.weighted_moment(q)


def load_custom_autocov(path) -> np.ndarray:
    """Read ``h value`` lines (h = 0, 1, 2, ... ascending)."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            h, value = line.split()
            rows.append((int(h), float(value)))
    if not rows or [h for h, _ in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: lags must start at 0 and increase by one")
    return np.array([v for _, v in rows])


# ---------------------------------------------------------------------------
# group means
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GroupCovariance:
    """Covariance of ``Y_i = sqrt(q) (mu_hat_i - mu)`` over ``K`` groups of size ``q``."""

    K: int
    q: int
    matrix: np.ndarray


def _cross_block(gamma: np.ndarray, q: int, d: int) -> float:
    h = np.arange(1 - q, q)
    lags = np.abs(h - d * q)
    gam = np.where(lags < gamma.size, gamma[np.minimum(lags, gamma.size - 1)], 0.0)
    return float(np.sum((q - np.abs(h)) / q * gam))


def group_covariance_from_autocov(gamma, K: int, q: int) -> np.ndarray:
    """Group-mean covariance for autocovariances ``gamma(0..H)`` (zero beyond H)."""
    if K < 2 or q < 1:
        raise ValueError("need K >= 2 and q >= 1")
    gamma = np.asarray(gamma, dtype=float)
    first = np.array([_cross_block(gamma, q, d) for d in range(K)])
    idx = np.abs(np.subtract.outer(np.arange(K), np.arange(K)))
    return first[idx]


def group_mean_covariance(model: ProcessModel, K: int, q: int) -> GroupCovariance:
    gamma = model.autocov_array(K * q)
    return GroupCovariance(K, q, group_covariance_from_autocov(gamma, K, q))


# ---------------------------------------------------------------------------
# exact simulation
# ---------------------------------------------------------------------------
@lru_cache(maxsize=64)
def _innovation_factor(model: ProcessModel, T: int):
    """Band Cholesky factor of ``Cov(W)`` with ``W_1 = X_1`` and
    ``W_t = X_t - rho X_{t-1}``.

    ``X = R^{-1} W`` with ``R`` the bidiagonal AR filter, so
    ``R^{-1} chol(Cov(W))`` is a lower-triangular factor of ``Gamma_T``;
    ``Cov(W)`` is banded for every supported model.
    """
    rho = model.rho
    hmax = (model.support if model.support is not None else 1) + 1
    g = model.autocov_array(hmax + 1)
    lags = np.arange(hmax + 1)
    below = np.abs(lags - 1)
    gw = (1.0 + rho * rho) * g[lags] - rho * (g[below] + g[lags + 1])
    cross = g[lags] - rho * g[below]  # Cov(X_1, W_{1+h})
    tol = 1e-14 * g[0]
    active = [h for h in range(1, hmax + 1) if abs(gw[h]) > tol or abs(cross[h]) > tol]
    m = min(max(active, default=0), T - 1)
    ab = np.zeros((m + 1, T))
    for k in range(m + 1):
        ab[k, : T - k] = gw[k]
    ab[0, 0] = g[0]
    ab[1 : m + 1, 0] = cross[1 : m + 1]
    factor, info = _backend.band_cholesky(ab)
    if info != 0:
        raise FactorizationFailure(f"autocovariance matrix is not positive definite (minor {info})")
    return factor


def simulate(model: ProcessModel, T: int, seed: int, reps: int | None = None, key=()) -> np.ndarray:
    """Exact draws from ``N(0, Gamma_T)``.

    Returns one series of length ``T`` when ``reps`` is None, otherwise an
    ``(reps, T)`` array whose row ``r`` depends only on ``(seed, key, r)``.
    """
    if T < 2:
        raise ValueError("T must be >= 2")
    factor = _innovation_factor(model, int(T))
    n = 1 if reps is None else int(reps)
    out = np.empty((n, T))
    for b, start, stop in block_spans(n):
        z = block_rng(seed, b, (0x5EED, *key)).standard_normal((stop - start, T))
        w = _backend.band_lower_matvec(factor, z)
        if model.rho != 0.0:
            w = _backend.ar1_filter(w, model.rho)
        out[start:stop] = w
    return out[0] if reps is None else out
