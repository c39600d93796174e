"""Special functions and the seeded Monte Carlo expectation engine.

Randomness is organised in fixed-size blocks of replications.  Block ``b``
of a stream keyed by ``(seed, *key)`` draws from a Philox generator seeded
with ``SeedSequence([seed, *key, b])``, so replication ``r`` always sees the
same normals no matter how many replications are requested, how the blocks
are scheduled, or how many worker threads run them.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from fixsmooth.exceptions import NonFinite

BLOCK_SIZE = 8192

__all__ = [
    "BLOCK_SIZE",
    "MCExpectation",
    "block_rng",
    "block_spans",
    "chi2_cdf",
    "chi2_pdf",
    "chi2_pdf_deriv",
    "chi2_quantile",
    "g1",
    "g1_prime",
    "g1_second",
    "mc_expect",
    "noncentral_t_sample",
    "norm_cdf",
    "norm_quantile",
    "t_cdf",
    "t_quantile",
    "t_abs_cdf",
]


# ---------------------------------------------------------------------------
# chi-square, t and normal
# ---------------------------------------------------------------------------
def chi2_cdf(k, x):
    """Chi-square distribution function ``G_k(x)``; zero for ``x <= 0``."""
    x = np.asarray(x, dtype=float)
    out = special.gammainc(np.asarray(k, dtype=float) / 2.0, np.maximum(x, 0.0) / 2.0)
    out = np.where(x > 0, out, 0.0)
    return out if out.ndim else float(out)


def chi2_pdf(k, x):
    """Chi-square density; zero for ``x <= 0`` except the ``k = 2`` jump at 0."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    half = k / 2.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        logpdf = (half - 1.0) * np.log(x) - x / 2.0 - half * np.log(2.0) - special.gammaln(half)
        out = np.where(x > 0, np.exp(logpdf), 0.0)
    return out if out.ndim else float(out)


def chi2_pdf_deriv(k, x):
    """Derivative of the chi-square density with respect to ``x``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, chi2_pdf(k, x) * ((np.asarray(k) / 2.0 - 1.0) / x - 0.5), 0.0)
    return out if out.ndim else float(out)


def chi2_quantile(k, p):
    out = 2.0 * special.gammaincinv(np.asarray(k, dtype=float) / 2.0, np.asarray(p, dtype=float))
    return out if np.ndim(out) else float(out)


def g1(x):
    """``G_1``, the chi-square(1) distribution function."""
    return chi2_cdf(1, x)


def g1_prime(x):
    """``G_1'``: the chi-square(1) density."""
    return chi2_pdf(1, x)


def g1_second(x):
    """``G_1''``: ``g_1(x) * (-1/(2x) - 1/2)``, analytic."""
    return chi2_pdf_deriv(1, x)


def norm_cdf(x):
    return special.ndtr(x)


def norm_quantile(p):
    return special.ndtri(p)


def t_cdf(k, x):
    out = special.stdtr(np.asarray(k, dtype=float), np.asarray(x, dtype=float))
    return out if np.ndim(out) else float(out)


def t_quantile(k, p):
    out = special.stdtrit(np.asarray(k, dtype=float), np.asarray(p, dtype=float))
    return out if np.ndim(out) else float(out)


def t_abs_cdf(k, x):
    """``P(|t_k| <= x)``, defined as 0 for ``x <= 0``."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0, 2.0 * special.stdtr(float(k), np.maximum(x, 0.0)) - 1.0, 0.0)
    return out if out.ndim else float(out)


def noncentral_t_sample(k, delta, rng, size=None):
    """Draws of ``(Z + delta) / sqrt(chi2_k / k)`` with independent parts."""
    z = rng.standard_normal(size)
    chi = rng.chisquare(k, size)
    return (z + delta) / np.sqrt(chi / k)


# ---------------------------------------------------------------------------
# Monte Carlo engine
# ---------------------------------------------------------------------------
def block_rng(seed: int, block: int, key: Sequence[int] = ()) -> np.random.Generator:
    """Counter-based generator for one block of replications."""
    if seed is None:
        raise ValueError("a seed is required")
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in key), int(block)])
    return np.random.Generator(np.random.Philox(ss))


def block_spans(reps: int, block_size: int = BLOCK_SIZE):
    """Yield ``(block_index, start, stop)`` covering ``range(reps)``."""
    for b, start in enumerate(range(0, reps, block_size)):
        yield b, start, min(start + block_size, reps)


@dataclass(frozen=True)
class MCExpectation:
    """Monte Carlo mean with its standard error.

    ``value`` and ``std_error`` are floats for scalar integrands and arrays
    of matching shape when the integrand returns several columns.
    """

    value: float | np.ndarray
    std_error: float | np.ndarray
    reps: int

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if np.any(np.asarray(self.std_error) < 0):
            raise ValueError("std_error must be non-negative")


def _block_moments(f, dim, seed, key, b, n):
    rng = block_rng(seed, b, key)
    v = rng.standard_normal((n, dim))
    vals = np.asarray(f(v), dtype=float)
    if vals.shape[0] != n:
        raise ValueError("integrand must return one value (or row) per draw")
    if not np.all(np.isfinite(vals)):
        raise NonFinite("integrand produced a non-finite value")
    mean = vals.mean(axis=0)
    m2 = ((vals - mean) ** 2).sum(axis=0)
    return n, mean, m2


def mc_expect(
    f: Callable[[np.ndarray], np.ndarray],
    dim: int,
    reps: int,
    seed: int,
    *,
    key: Sequence[int] = (),
    workers: int = 1,
    min_reps: int = 1000,
) -> MCExpectation:
    """Estimate ``E[f(v)]`` for ``v`` a vector of ``dim`` iid standard normals.

    Parameters
    ----------
    f : callable
        Vectorised integrand: maps an ``(n, dim)`` array of draws to ``n``
        values, or to an ``(n, m)`` array to estimate ``m`` expectations
        from the same draws.
    dim, reps, seed
        Dimension of the normal vector, number of replications and master
        seed.
    key : sequence of int, optional
        Extra stream identifiers, for independent streams under one seed.
    workers : int
        Threads used to evaluate blocks.  The result is bit-identical for
        every value.

    Returns
    -------
    MCExpectation
    """
    if reps < min_reps:
        raise ValueError(f"reps must be >= {min_reps}")
    spans = list(block_spans(reps))
    job = lambda span: _block_moments(f, dim, seed, key, span[0], span[2] - span[1])  # noqa: E731
    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, spans))
    else:
        parts = [job(span) for span in spans]

    # Chan et al. pairwise combination, always in block order
    n_tot, mean, m2 = parts[0]
    for n, mu, m2b in parts[1:]:
        delta = mu - mean
        n_new = n_tot + n
        mean = mean + delta * (n / n_new)
        m2 = m2 + m2b + delta**2 * (n_tot * n / n_new)
        n_tot = n_new
    var = m2 / (n_tot - 1) if n_tot > 1 else np.zeros_like(m2)
    se = np.sqrt(var / n_tot)
    if np.ndim(mean) == 0:
        return MCExpectation(float(mean), float(se), int(n_tot))
    return MCExpectation(np.asarray(mean), np.asarray(se), int(n_tot))
