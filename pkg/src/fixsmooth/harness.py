"""Reproducible Monte Carlo experiments.

Every experiment is a pure function of its :class:`ExperimentConfig`.  Cell
``c`` of an experiment draws its outer replications from streams keyed by
``(seed, c, chunk)``, so results do not depend on execution order.
Outputs are written atomically as CSV, next to a JSON manifest.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fixsmooth import __version__, _backend
from fixsmooth.bootstrap import SubsamplingT, WaldF, bootstrap_distribution
from fixsmooth.distributions import (
    BLOCK_SIZE,
    chi2_quantile,
    g1_prime,
    mc_expect,
    norm_quantile,
    t_quantile,
)
from fixsmooth.exceptions import FixSmoothError, UnequalGroups
from fixsmooth.expansion import aleph, fixed_b_limit_cdf, psi, small_b_second_order, upsilon, upsilon_grid, upsilon_local
from fixsmooth.kernels import KernelSpec, demean, nystrom_eigs, scale
from fixsmooth.models import ProcessModel, group_mean_covariance, simulate

__all__ = [
    "ExperimentConfig",
    "ErpRow",
    "solve_quantile",
    "run_upsilon_surface",
    "run_erp",
    "run_power",
    "run_rate_diagnostics",
    "radial_rate_terms",
    "aleph_sup",
    "write_csv",
]

T_METHODS = ("first-order", "second-order", "naive", "bootstrap")
F_METHODS = ("first-order", "second-order", "naive", "small-b", "bootstrap")


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid and Monte Carlo settings of one experiment.

    ``smoothing`` entries are ``K`` (an int, subsampling t) or a tuple
    ``(kernel, b, demeaned)`` for the Wald statistic.
    """

    experiment: str
    seed: int
    models: tuple = ("ar1:0.5",)
    T: tuple = (256,)
    smoothing: tuple = (8,)
    alphas: tuple = (0.05,)
    reps: int = 50_000
    inner_reps: int = 999
    expansion_reps: int = 200_000
    methods: tuple | None = None
    deltas: tuple = (0.0,)
    l: int | None = None
    out: str | None = None

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is required")
        for name in ("models", "T", "smoothing", "alphas"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} grid is empty")
        if self.reps < 1000:
            raise ValueError("reps must be >= 1000")

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class ErpRow:
    method: str
    model: str
    T: int
    setting: str
    alpha: float
    rate: float
    se: float
    predicted: float
    critical_value: float
    reps: int
    error: str = ""

    def __post_init__(self):
        if not (np.isnan(self.rate) or 0.0 <= self.rate <= 1.0):
            raise ValueError("rate outside [0, 1]")


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------
def write_csv(rows, path, header, manifest: dict | None = None):
    """Atomically write ``rows`` (sequences or dataclasses) to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(dataclasses.astuple(r) if dataclasses.is_dataclass(r) else r)
    os.replace(tmp, path)
    if manifest is not None:
        mpath = path.with_suffix(path.suffix + ".manifest.json")
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        os.replace(tmp, mpath)


def _manifest(config: ExperimentConfig):
    return {"config": dataclasses.asdict(config), "config_sha256": config.digest(), "seed": config.seed,
            "version": __version__, "backend": _backend.BACKEND}


def _emit(rows, header, config):
    if config.out:
        write_csv(rows, config.out, header, _manifest(config))
    return rows


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------
def solve_quantile(cdf, prob: float, hi: float, tol: float = 1e-6, max_iter: int = 200) -> float:
    """Bisection for ``cdf(x) = prob`` on ``[0, hi]``, with ``cdf`` clamped to [0, 1]."""
    lo, f_hi = 0.0, min(1.0, cdf(hi))
    while f_hi < prob and hi < 1e6:
        hi *= 2.0
        f_hi = min(1.0, cdf(hi))
    for _ in range(max_iter):
        mid = (lo + hi) / 2.0
        val = float(np.clip(cdf(mid), 0.0, 1.0))
        if abs(val - prob) <= tol or hi - lo < 1e-12:
            return mid
        if val < prob:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def _kernel_setting(entry):
    name, b, demeaned = entry
    if isinstance(name, KernelSpec):
        return scale(name, b) if b != 1.0 else name
    return KernelSpec.difference(name, b=b, demeaned=bool(demeaned))


def _setting_label(entry):
    if isinstance(entry, (int, np.integer)):
        return f"K={entry}"
    k = _kernel_setting(entry)
    return k.name


def _outer_stats(model, T, reps, seed, cell, statfun, shift=0.0):
    """Statistic values over ``reps`` simulated series, in chunks."""
    out = np.empty(reps)
    for c, start in enumerate(range(0, reps, BLOCK_SIZE)):
        stop = min(start + BLOCK_SIZE, reps)
        y = simulate(model, T, seed, stop - start, key=(cell, c))
        out[start:stop] = statfun(y + shift if shift else y)
    return out


def _rate(stats, crit):
    finite = np.isfinite(stats)
    n = int(finite.sum())
    rate = float(np.mean(np.abs(stats[finite]) > crit)) if n else np.nan
    se = float(np.sqrt(rate * (1 - rate) / n)) if n else np.nan
    return rate, se, n


def _bootstrap_rate(model, T, reps, inner, seed, cell, statistic, alpha, l):
    rejections, n = 0, 0
    for c, start in enumerate(range(0, reps, BLOCK_SIZE)):
        stop = min(start + BLOCK_SIZE, reps)
        ys = simulate(model, T, seed, stop - start, key=(cell, c))
        for i, y in enumerate(ys):
            obs = statistic.rows(y[None, :])[0]
            if not np.isfinite(obs):
                continue
            out = bootstrap_distribution(y, statistic, l, inner, seed, (alpha,), key=(cell, c, i))
            rejections += abs(obs) > out.critical_values[float(alpha)]
            n += 1
    rate = rejections / n
    return rate, float(np.sqrt(rate * (1 - rate) / n)), n


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------
def run_upsilon_surface(Ks, alphas, reps: int = 500_000, seed: int = 0, out=None, method="mc"):
    """``Upsilon(t_{K-1}(1 - alpha); K) / K`` for each ``(K, alpha)``.

    With ``method="mc"`` all cells share one set of normals, which keeps
    the shape of the surface (its ordering in ``K`` and ``alpha``) free of
    independent cell-to-cell noise.  Also reports the large-K limit
    ``2 x^2 G_1'(x^2)`` at the same ``x`` and at the normal quantile
    ``z_{1-alpha}``.
    """
    cells = [(K, a, t_quantile(K - 1, 1.0 - a)) for K in Ks for a in alphas]
    if method == "mc":
        ests = upsilon_grid([(x, K) for K, _, x in cells], reps, seed)
    else:
        ests = [upsilon(x, K, reps, seed, method) for K, _, x in cells]
    rows = []
    for (K, a, x), est in zip(cells, ests):
        z = norm_quantile(1.0 - a)
        rows.append(
            (K, a, x, est.value / K, est.mc_std_error / K,
             2 * x * x * g1_prime(x * x), 2 * z * z * g1_prime(z * z), est.reps)
        )
    header = ["K", "alpha", "x", "upsilon_over_K", "se", "limit_at_x", "limit_at_z", "reps"]
    if out:
        write_csv(rows, out, header, {"seed": seed, "reps": reps, "method": method, "version": __version__})
    return rows


def run_erp(config: ExperimentConfig) -> list[ErpRow]:
    """Empirical rejection rates under the null for each cell and method."""
    rows = []
    cell = 0
    for mspec in config.models:
        model = ProcessModel.parse(mspec)
        for T in config.T:
            for setting in config.smoothing:
                cell += 1
                for a in config.alphas:
                    try:
                        rows.extend(_erp_cell(config, model, mspec, T, setting, a, cell))
                    except FixSmoothError as err:
                        rows.append(ErpRow("all", mspec, T, _setting_label(setting), a, np.nan, np.nan, np.nan,
                                           np.nan, 0, type(err).__name__))
    return _emit(rows, [f.name for f in dataclasses.fields(ErpRow)], config)


def _erp_cell(config, model, mspec, T, setting, a, cell):
    label = _setting_label(setting)
    seed = config.seed
    rows = []

    def add(method, stats, crit, predicted, rate=None):
        if rate is None:
            rate, se, n = _rate(stats, crit)
        else:
            rate, se, n = rate
        rows.append(ErpRow(method, mspec, T, label, a, rate, se, predicted, crit, n))

    if isinstance(setting, (int, np.integer)):
        K = int(setting)
        if T % K:
            raise UnequalGroups(f"K={K} does not divide T={T}")
        methods = config.methods or T_METHODS
        stats = _outer_stats(model, T, config.reps, seed, cell, lambda y: _backend.subsampling_t_rows(y, K, 0.0))
        x1 = t_quantile(K - 1, 1.0 - a / 2.0)
        ps = lambda x: psi(x, K, model, T, method="quad").value  # noqa: E731
        for m in methods:
            try:
                if m == "first-order":
                    add(m, stats, x1, 1.0 - ps(x1))
                elif m == "second-order":
                    x2 = solve_quantile(ps, 1.0 - a, 10.0 * x1)
                    add(m, stats, x2, 1.0 - ps(x2))
                elif m == "naive":
                    z = norm_quantile(1.0 - a / 2.0)
                    add(m, stats, z, 1.0 - ps(z))
                elif m == "bootstrap":
                    r = _bootstrap_rate(model, T, config.reps, config.inner_reps, seed, cell, SubsamplingT(K), a,
                                        config.l)
                    add(m, None, np.nan, a, r)
            except FixSmoothError as err:
                rows.append(ErpRow(m, mspec, T, label, a, np.nan, np.nan, np.nan, np.nan, 0, type(err).__name__))
        return rows

    kernel = _kernel_setting(setting)
    methods = config.methods or F_METHODS
    wf = WaldF(kernel)
    stats = _outer_stats(model, T, config.reps, seed, cell, wf.rows)
    eig = nystrom_eigs(demean(kernel), allow_coarse=True)  # the limit of F_T(inf) uses demeaned data
    er = config.expansion_reps
    first = lambda x: fixed_b_limit_cdf(eig, x, er, seed).value  # noqa: E731
    hi = 10.0 * chi2_quantile(1, 1.0 - a) / max(kernel.b, 0.1)
    x1 = solve_quantile(first, 1.0 - a, hi)
    second = lambda x: (lambda e: e.components["first_order"] + e.value)(aleph(x, eig, model, T, np.inf, er, seed))  # noqa: E731
    for m in methods:
        try:
            if m == "first-order":
                add(m, stats, x1, 1.0 - second(x1))
            elif m == "second-order":
                x2 = solve_quantile(second, 1.0 - a, hi)
                add(m, stats, x2, 1.0 - second(x2))
            elif m == "naive":
                xn = chi2_quantile(1, 1.0 - a)
                add(m, stats, xn, 1.0 - second(xn))
            elif m == "small-b":
                if kernel.b > 0.5 or kernel.form not in ("bartlett", "parzen", "qs", "daniel", "tukey"):
                    continue
                sb = lambda x: small_b_second_order(x, kernel.b, T, model, kernel.form).value  # noqa: E731
                xs = solve_quantile(sb, 1.0 - a, hi)
                add(m, stats, xs, 1.0 - second(xs))
            elif m == "bootstrap":
                r = _bootstrap_rate(model, T, config.reps, config.inner_reps, seed, cell, wf, a, config.l)
                add(m, None, np.nan, a, r)
        except FixSmoothError as err:
            rows.append(ErpRow(m, mspec, T, label, a, np.nan, np.nan, np.nan, np.nan, 0, type(err).__name__))
    return rows


def run_power(config: ExperimentConfig):
    """Rejection rates of the first-order subsampling t test under
    ``mu = mu0 + delta sigma / sqrt(T)``, with the local expansion's prediction."""
    rows = []
    cell = 0
    for mspec in config.models:
        model = ProcessModel.parse(mspec)
        for T in config.T:
            for K in config.smoothing:
                cell += 1
                if T % K:
                    raise UnequalGroups(f"K={K} does not divide T={T}")
                for a in config.alphas:
                    x1 = t_quantile(K - 1, 1.0 - a / 2.0)
                    for d in config.deltas:
                        shift = d * np.sqrt(model.sigma2 / T)
                        stats = _outer_stats(model, T, config.reps, config.seed, cell,
                                             lambda y: _backend.subsampling_t_rows(y, K, 0.0), shift)
                        rate, se, n = _rate(stats, x1)
                        ups = upsilon_local(x1, K, d, config.expansion_reps, config.seed)
                        first = ups.components["p_reject"]
                        pred = first + model.B / (2.0 * model.sigma2 * T) * ups.value
                        rows.append((mspec, T, K, a, d, rate, se, first, pred, ups.mc_std_error, n))
    header = ["model", "T", "K", "alpha", "delta", "rate", "se", "first_order", "predicted", "upsilon_delta_se", "reps"]
    return _emit(rows, header, config)


# ---------------------------------------------------------------------------
# rate diagnostics
# ---------------------------------------------------------------------------
def _lead_delta(model, K, T):
    """Leading-order ``Cov(Y) - sigma^2 I`` of the scaled group means."""
    c = K * model.B / T
    return -c * np.eye(K) + (c / 2.0) * (np.eye(K, k=1) + np.eye(K, k=-1))


def radial_rate_terms(model: ProcessModel, K: int, Ts, x: float, reps: int, seed: int):
    """``P(|T_K| <= x) - Psi`` and ``P(|T_K| <= x) - P(|t_{K-1}| <= x)`` for each ``T``.

    ``T_K`` depends on the group means only through their direction, whose
    law under ``N(0, S)`` has density ratio
    ``det(S)^{-1/2} (u' S^{-1} u)^{-K/2}`` against the uniform direction.
    Both differences become expectations over iid normals of the acceptance
    indicator times a small weight, and the same normals serve every ``T``.
    """
    Ts = list(Ts)
    s2 = model.sigma2
    mats = []
    for T in Ts:
        if T % K:
            raise UnequalGroups(f"K={K} does not divide T={T}")
        S = group_mean_covariance(model, K, T // K).matrix / s2
        sign, logdet = np.linalg.slogdet(S)
        Q = np.linalg.inv(S) - np.eye(K)
        D = _lead_delta(model, K, T) / s2
        mats.append((np.exp(-0.5 * logdet), Q, D, np.trace(D)))

    def f(v):
        u = v / np.linalg.norm(v, axis=1, keepdims=True)
        t = np.sqrt(K) * u.mean(axis=1) / u.std(axis=1, ddof=1)
        acc = (np.abs(t) <= x).astype(float)
        cols = []
        for c, Q, D, trD in mats:
            lr = c * (1.0 + np.einsum("ni,ij,nj->n", u, Q, u)) ** (-K / 2.0)
            lin = 1.0 - trD / 2.0 + K * np.einsum("ni,ij,nj->n", u, D, u) / 2.0
            cols += [acc * (lr - lin), acc * (lr - 1.0)]
        return np.column_stack(cols)

    est = mc_expect(f, K, reps, seed, key=(0x7A7E, K))
    val = np.asarray(est.value).reshape(len(Ts), 2)
    se = np.asarray(est.std_error).reshape(len(Ts), 2)
    return {T: {"minus_psi": val[i, 0], "minus_psi_se": se[i, 0], "minus_first": val[i, 1],
                "minus_first_se": se[i, 1]} for i, T in enumerate(Ts)}


def aleph_sup(eig, model, T, xs, reps, seed):
    est = aleph(np.asarray(xs), eig, model, T, np.inf, reps, seed)
    i = int(np.argmax(np.abs(est.value)))
    return float(abs(est.value[i])), float(est.mc_std_error[i]), float(np.asarray(xs)[i])


def _ratio(a, sa, b, sb):
    if a == 0.0 or b == 0.0:
        return np.nan, np.nan
    r = a / b
    return r, abs(r) * np.sqrt((sa / a) ** 2 + (sb / b) ** 2)


def run_rate_diagnostics(config: ExperimentConfig):
    """Doubling-``T`` ratios for the subsampling t expansion error and for
    ``sup_x |aleph_T(x; inf)|``.

    Rows: ``quantity, model, setting, T, value, se, ratio_to_previous, ratio_se``.
    """
    rows = []
    Ts = sorted(config.T)
    for mspec in config.models:
        model = ProcessModel.parse(mspec)
        for setting in config.smoothing:
            if isinstance(setting, (int, np.integer)):
                K = int(setting)
                for a in config.alphas:
                    x = t_quantile(K - 1, 1.0 - a / 2.0)
                    terms = radial_rate_terms(model, K, Ts, x, config.reps, config.seed)
                    for q in ("minus_psi", "minus_first"):
                        prev = None
                        for T in Ts:
                            v, s = terms[T][q], terms[T][q + "_se"]
                            r, rs = _ratio(*prev, v, s) if prev else (np.nan, np.nan)
                            rows.append((f"emp_{q}", mspec, f"K={K},alpha={a}", T, v, s, r, rs))
                            prev = (v, s)
            else:
                kernel = _kernel_setting(setting)
                eig = nystrom_eigs(demean(kernel), allow_coarse=True)
                xs = np.linspace(0.25, 4.0 * chi2_quantile(1, 0.99), 40)
                prev = None
                for T in Ts:
                    v, s, _ = aleph_sup(eig, model, T, xs, config.expansion_reps, config.seed)
                    r, rs = _ratio(*prev, v, s) if prev else (np.nan, np.nan)
                    rows.append(("sup_aleph", mspec, kernel.name, T, v, s, r, rs))
                    prev = (v, s)
    header = ["quantity", "model", "setting", "T", "value", "se", "ratio_to_previous", "ratio_se"]
    return _emit(rows, header, config)
