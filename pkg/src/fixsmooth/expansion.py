"""Higher-order approximations to the null distributions of ``T_K`` and ``F_T``.

Monte Carlo parts use :func:`fixsmooth.distributions.mc_expect`, so every
estimate is a deterministic function of its inputs and the seed.  Where two
expectations share the same normals they are estimated in one pass and the
standard error of their combination is computed from the combined integrand.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from fixsmooth import _backend
from fixsmooth.distributions import (
    chi2_cdf,
    chi2_pdf,
    g1,
    g1_prime,
    g1_second,
    mc_expect,
    t_abs_cdf,
)
from fixsmooth.kernels import EigenSystem, KernelSpec, kernel_constants, parzen_exponent
from fixsmooth.models import ProcessModel, group_mean_covariance
from fixsmooth.statistics import basis_on_grid

__all__ = [
    "ExpansionEstimate",
    "upsilon",
    "upsilon_grid",
    "psi",
    "upsilon_local",
    "exact_coefficients",
    "exact_coeff_expansion",
    "increasing_K_expansion",
    "xi_variances",
    "aleph",
    "fixed_b_limit_cdf",
    "small_b_second_order",
    "fix_small_leading",
    "sup_condition",
]

DEFAULT_REPS = 500_000


@dataclass(frozen=True)
class ExpansionEstimate:
    """An approximation with its Monte Carlo error and a named breakdown."""

    value: float | np.ndarray
    mc_std_error: float | np.ndarray = 0.0
    reps: int = 0
    components: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.asarray(self.mc_std_error) < 0):
            raise ValueError("mc_std_error must be non-negative")

    def __float__(self):
        return float(self.value)

    def clipped(self):
        """Value clamped to [0, 1], for presentation of probabilities."""
        return np.clip(self.value, 0.0, 1.0)


# ---------------------------------------------------------------------------
# subsampling t: Upsilon and friends
# ---------------------------------------------------------------------------
def _gk_ratio(k, num, x):
    """``G_k(num / x^2)`` with ``G_k(inf) = 1`` at ``x = 0``."""
    if x == 0:
        return np.where(num > 0, 1.0, 0.0)
    return chi2_cdf(k, num / (x * x))


def _chi_terms(x, K, reps, seed, coef, method, key=()):
    """``E[D G_1(D x^2/(K-1))]``, ``E[U G_{K-1}((K-1) U / x^2)]`` and the
    combination ``coef[0] * first + coef[1] * second``.

    ``D ~ chi2_{K-1}`` and ``U ~ chi2_1`` are built from the same ``K``
    normals per replication.
    """
    d = K - 1
    if method == "quad":
        e_d = integrate.quad(lambda u: u * g1(u * x * x / d) * chi2_pdf(d, u), 0, np.inf, limit=400, epsabs=1e-13)[0]
        e_u = integrate.quad(
            lambda u: u * float(_gk_ratio(d, d * u, x)) * chi2_pdf(1, u), 0, np.inf, limit=400, epsabs=1e-13
        )[0]
        return (e_d, e_u, coef[0] * e_d + coef[1] * e_u), (0.0, 0.0, 0.0), 0
    if method != "mc":
        raise ValueError("method must be 'mc' or 'quad'")

    def f(v):
        u = v[:, 0] ** 2
        dd = np.sum(v[:, 1:] ** 2, axis=1)
        # D G_1(.) = D - D (1 - G_1(.)); the first part has known mean K - 1
        a = d - dd * special.erfc(np.sqrt(dd * x * x / (2.0 * d)))
        b = u * _gk_ratio(d, d * u, x)
        return np.column_stack([a, b, coef[0] * a + coef[1] * b])

    est = mc_expect(f, K, reps, seed, key=(0x0A, K, *key), min_reps=1000)
    return tuple(est.value), tuple(est.std_error), est.reps


def upsilon(x: float, K: int, reps: int = DEFAULT_REPS, seed: int | None = 0, method: str = "mc") -> ExpansionEstimate:
    """Second-order coefficient ``Upsilon(x; K)`` of the subsampling t statistic.

    ``method="quad"`` evaluates both expectations by numerical integration
    (deterministic, used where Monte Carlo noise would swamp a comparison).
    """
    if K < 2 or x < 0:
        raise ValueError("need K >= 2 and x >= 0")
    p = t_abs_cdf(K - 1, x)
    (e_d, e_u, comb), (se_d, se_u, se), n = _chi_terms(x, K, reps, seed, (K + 1.0, -1.0), method)
    value = -K * K * p + comb + 1.0
    comps = {"p_t": p, "E_D": e_d, "E_D_se": se_d, "E_U": e_u, "E_U_se": se_u}
    return ExpansionEstimate(float(value), float(se), n, comps)


def upsilon_grid(points, reps: int = DEFAULT_REPS, seed: int | None = 0, workers: int = 1):
    """``Upsilon(x; K)`` at several ``(x, K)`` pairs from one set of normals.

    Every point reuses the first ``K`` columns of the same ``max K``-column
    draws, so differences between neighbouring points (in ``K`` or in
    ``x``) are estimated far more precisely than by independent runs.

    Returns
    -------
    list of ExpansionEstimate, in the order of ``points``.
    """
    points = [(float(x), int(K)) for x, K in points]
    if not points or any(K < 2 or x < 0 for x, K in points):
        raise ValueError("need K >= 2 and x >= 0 at every point")
    kmax = max(K for _, K in points)

    def f(v):
        u = v[:, 0] ** 2
        cs = np.cumsum(v[:, 1:] ** 2, axis=1)
        cols = []
        for x, K in points:
            d = K - 1
            dd = cs[:, d - 1]
            a = d - dd * special.erfc(np.sqrt(dd * x * x / (2.0 * d)))
            b = u * _gk_ratio(d, d * u, x)
            cols.append((K + 1.0) * a - b)
        return np.column_stack(cols)

    est = mc_expect(f, kmax, reps, seed, key=(0x0E, kmax), workers=workers)
    vals, ses = np.atleast_1d(est.value), np.atleast_1d(est.std_error)
    out = []
    for (x, K), comb, se in zip(points, vals, ses):
        p = t_abs_cdf(K - 1, x)
        out.append(ExpansionEstimate(float(-K * K * p + comb + 1.0), float(se), est.reps, {"p_t": p, "K": K, "x": x}))
    return out


def psi(x: float, K: int, model: ProcessModel, T: int, reps: int = DEFAULT_REPS, seed: int | None = 0, method="mc"):
    """``Psi(x; K) = P(|t_{K-1}| <= x) - B / (2 sigma^2 T) Upsilon(x; K)``."""
    p = t_abs_cdf(K - 1, x)
    coef = model.B / (2.0 * model.sigma2 * T)
    if coef == 0.0:
        return ExpansionEstimate(float(p), 0.0, 0, {"first_order": p, "correction": 0.0, "upsilon": np.nan})
    ups = upsilon(x, K, reps, seed, method)
    value = p - coef * ups.value
    comps = {"first_order": p, "correction": -coef * ups.value, "upsilon": ups.value}
    return ExpansionEstimate(float(value), abs(coef) * ups.mc_std_error, ups.reps, comps)


def upsilon_local(x: float, K: int, delta: float, reps: int = DEFAULT_REPS, seed: int | None = 0):
    """``Upsilon_delta(x; K)`` under the local alternative.

    All three terms come from one pass over ``(Z, chi2_{K-1})``.
    """
    if K < 2 or x <= 0:
        raise ValueError("need K >= 2 and x > 0")

    def f(v):
        z = v[:, 0]
        dd = np.sum(v[:, 1:] ** 2, axis=1)
        tail = (np.abs(z + delta) > x * np.sqrt(dd / (K - 1))).astype(float)
        e1, e2 = tail * z * z, tail * dd
        return np.column_stack([tail, e1, e2, K * K * tail - e1 - (K + 1) * e2])

    est = mc_expect(f, K, reps, seed, key=(0x0B, K))
    comps = {
        "p_reject": est.value[0],
        "p_reject_se": est.std_error[0],
        "e1": est.value[1],
        "e2": est.value[2],
    }
    return ExpansionEstimate(float(est.value[3]), float(est.std_error[3]), est.reps, comps)


def exact_coefficients(model: ProcessModel, K: int, T: int, neighbours_only: bool = False):
    """``(alpha, beta, tau)`` from the exact group-mean covariance.

    ``neighbours_only`` zeroes entries with ``|i - j| > 1`` (a diagnostic for
    how much distant groups matter).
    """
    if T % K:
        raise ValueError("K must divide T")
    s = group_mean_covariance(model, K, T // K).matrix.copy()
    if neighbours_only:
        idx = np.abs(np.subtract.outer(np.arange(K), np.arange(K)))
        s[idx > 1] = 0.0
    s2 = model.sigma2
    diag = np.diag(s) - s2
    off = s.sum() - np.trace(s)
    alpha = diag.sum() / (2.0 * s2)
    beta = (diag.sum() + off) / (2.0 * K * s2)
    tau = diag.sum() / (2.0 * K * s2) - off / (2.0 * K * (K - 1) * s2)
    return float(alpha), float(beta), float(tau)


def exact_coeff_expansion(
    x: float,
    K: int,
    model: ProcessModel,
    T: int,
    reps: int = DEFAULT_REPS,
    seed: int | None = 0,
    method: str = "mc",
    neighbours_only: bool = False,
):
    """Approximation to ``P(|T_K| > x)`` with exact ``alpha``, ``beta``, ``tau``."""
    alpha, beta, tau = exact_coefficients(model, K, T, neighbours_only)
    tail = 1.0 - t_abs_cdf(K - 1, x)
    (e_d, e_u, comb), (_, _, se), n = _chi_terms(x, K, reps, seed, (-tau, beta), method)
    value = (1.0 - alpha) * tail + comb + tau * (K - 1)
    comps = {"alpha": alpha, "beta": beta, "tau": tau, "t_tail": tail, "E_D": e_d, "E_U": e_u}
    return ExpansionEstimate(float(value), float(se), n, comps)


def increasing_K_expansion(x: float, K: int, model: ProcessModel, T: int) -> ExpansionEstimate:
    """Closed-form approximation to ``P(|T_K| <= x)`` when both ``K`` and ``T / K`` grow."""
    if K < 3 or x <= 0:
        raise ValueError("need K >= 3 and x > 0")
    y = x * x
    base = g1(y)
    k_term = y * y * g1_second(y) / (K - 1)
    bias = -(model.B * K / (T * model.sigma2)) * y * g1_prime(y)
    return ExpansionEstimate(float(base + k_term + bias), 0.0, 0, {"G1": base, "K_term": k_term, "bias_term": bias})


# ---------------------------------------------------------------------------
# Wald statistic: fixed-b limit and leading error
# ---------------------------------------------------------------------------
def xi_variances(model: ProcessModel, eig: EigenSystem, T: int, Kmax: int | None = None) -> np.ndarray:
    """Exact ``var(xi_0), var(xi_1), ..., var(xi_Kmax)`` under ``model``."""
    Kmax = eig.J if Kmax is None else Kmax
    H = model.effective_support(T - 1)
    gam = model.autocov_array(H)
    h = np.arange(1, H + 1)
    v0 = gam[0] + 2.0 * np.sum((1.0 - h / T) * gam[1:])
    out = np.empty(Kmax + 1)
    out[0] = v0
    if Kmax:
        phi0 = np.ascontiguousarray(basis_on_grid(eig, T, Kmax).T)
        s = _backend.lag_products(phi0, H)
        out[1:] = (gam[0] * s[:, 0] + 2.0 * s[:, 1:] @ gam[1:]) / T
    return out


def _active(eig: EigenSystem, K):
    J = eig.J if np.isinf(K) else min(int(K), eig.J)
    return min(J, eig.active)


def _fb_integrand(x, lam):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    total = lam.sum()

    def parts(v):
        D = (v[:, 1:] ** 2) @ lam
        y = np.multiply.outer(D, x)  # (n, nx)
        cdf = g1(y)
        w0 = -2.0 * y * g1_prime(y)
        wi = (v[:, 1:, None] ** 2 - 1.0) * (cdf - g1(total * x))[:, None, :]
        return cdf, w0, wi

    return x, parts


def fixed_b_limit_cdf(eig: EigenSystem, x, reps: int = DEFAULT_REPS, seed: int | None = 0, K=np.inf):
    """``P(v_0^2 / sum_j lambda_j v_j^2 <= x)``.

    ``v_0`` is integrated out analytically, so each replication contributes
    ``G_1(x sum_j lambda_j v_j^2)``.
    """
    J = _active(eig, K)
    lam = np.asarray(eig.eigenvalues[:J])
    xs, parts = _fb_integrand(x, lam)
    est = mc_expect(lambda v: parts(v)[0], J + 1, reps, seed, key=(0x0C, J))
    value, se = np.asarray(est.value).reshape(-1), np.asarray(est.std_error).reshape(-1)
    if np.ndim(x) == 0:
        return ExpansionEstimate(float(value[0]), float(se[0]), est.reps, {"J": J})
    return ExpansionEstimate(value, se, est.reps, {"J": J, "x": xs})


def aleph(
    x,
    eig: EigenSystem,
    model: ProcessModel,
    T: int,
    K=np.inf,
    reps: int = DEFAULT_REPS,
    seed: int | None = 0,
) -> ExpansionEstimate:
    """Leading ``O(1/T)`` error ``aleph_T(x; K)`` of the fixed-b approximation.

    The weights ``E[(v_i^2 - 1) 1{F <= x}]`` are estimated in a single pass
    after integrating ``v_0`` out: the ``i = 0`` weight becomes
    ``E[-2 y g_1(y)]`` with ``y = x sum lambda_j v_j^2`` and, for ``i >= 1``,
    the constant ``G_1(x sum lambda_j)`` is subtracted as a control variate.
    Eigenpairs with numerically zero eigenvalues carry zero weight and are
    dropped.  ``x`` may be an array; components then have a trailing x axis.
    """
    J = _active(eig, K)
    lam = np.asarray(eig.eigenvalues[:J])
    s2 = model.sigma2
    dv = xi_variances(model, eig, T, J) - s2
    xs, parts = _fb_integrand(x, lam)
    nx = xs.size

    def f(v):
        cdf, w0, wi = parts(v)
        total = (dv[0] * w0 + np.einsum("i,nix->nx", dv[1:], wi)) / (2.0 * s2)
        return np.concatenate([w0, wi.reshape(len(v), -1), total, cdf], axis=1)

    est = mc_expect(f, J + 1, reps, seed, key=(0x0D, J))
    val, se = np.asarray(est.value), np.asarray(est.std_error)
    weights = np.vstack([val[:nx], val[nx : nx + J * nx].reshape(J, nx)])
    weights_se = np.vstack([se[:nx], se[nx : nx + J * nx].reshape(J, nx)])
    total, total_se = val[(J + 1) * nx : (J + 2) * nx], se[(J + 1) * nx : (J + 2) * nx]
    contributions = dv[:, None] * weights / (2.0 * s2)
    comps = {
        "J": J,
        "var_gap": dv,
        "weights": weights,
        "weights_se": weights_se,
        "contributions": contributions,
        "first_order": val[(J + 2) * nx :],
    }
    if np.ndim(x) == 0:
        comps.update(weights=weights[:, 0], weights_se=weights_se[:, 0], contributions=contributions[:, 0])
        comps["first_order"] = float(comps["first_order"][0])
        return ExpansionEstimate(float(total[0]), float(total_se[0]), est.reps, comps)
    comps["x"] = xs
    return ExpansionEstimate(total, total_se, est.reps, comps)


def _builtin(kernel):
    return kernel.form if isinstance(kernel, KernelSpec) else KernelSpec.difference(kernel).form


def fix_small_leading(x: float, b: float, T: int, model: ProcessModel, kernel) -> float:
    """Small-b leading term ``-g_q W_q / (sigma^2 (bT)^q) G_1'(x) x``."""
    q, g = parzen_exponent(_builtin(kernel))
    return float(-g * model.weighted_moment(q) / (model.sigma2 * (b * T) ** q) * g1_prime(x) * x)


def small_b_second_order(x: float, b: float, T: int, model: ProcessModel, kernel) -> ExpansionEstimate:
    """Small-b approximation to ``P(F_T(inf) <= x)``."""
    if not 0.0 < b <= 0.5:
        raise ValueError("b must lie in (0, 0.5]")
    c1, c2 = kernel_constants(_builtin(kernel))
    base = g1(x)
    b_term = (c2 * g1_second(x) * x * x - c1 * g1_prime(x) * x) * b
    bias = fix_small_leading(x, b, T, model, kernel)
    return ExpansionEstimate(float(base + b_term + bias), 0.0, 0, {"G1": base, "b_term": b_term, "bias_term": bias})


def sup_condition(eig: EigenSystem, model: ProcessModel, T: int) -> dict:
    """Compare partial sums ``sum_{i<=k} lambda_i (var xi_i - sigma^2)`` with
    the full sum; a bounded ratio supports the small-b consistency result."""
    J = eig.active
    dv = xi_variances(model, eig, T, J)[1:] - model.sigma2
    partial = np.cumsum(eig.eigenvalues[:J] * dv)
    full = partial[-1]
    ratio = float(np.max(np.abs(partial)) / abs(full)) if full != 0 else np.inf
    return {"partial_sums": partial, "full_sum": float(full), "ratio": ratio, "J": J}
