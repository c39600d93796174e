import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from fixsmooth.bootstrap import (
    BootstrapOutcome,
    SubsamplingT,
    WaldF,
    bootstrap_distribution,
    bootstrap_test,
    critical_value,
    default_taper,
    resample,
    sample_autocov,
    tapered_cov,
    write_outcome_csv,
)
from fixsmooth.exceptions import NotPSD, UnequalGroups
from fixsmooth.kernels import KernelSpec
from fixsmooth.models import ProcessModel, simulate
from oracles import ks_distance


@pytest.fixture(scope="module")
def ar08():
    return simulate(ProcessModel.ar1(0.8), 512, seed=3)


def test_default_taper():
    assert default_taper(256) == 6
    assert default_taper(4) == 3


def test_sample_autocov_divisor():
    x = np.array([1.0, 2.0, 4.0, 3.0])
    e = x - x.mean()
    assert_allclose(sample_autocov(x, 2), [e @ e / 4, e[:-1] @ e[1:] / 4, e[:-2] @ e[2:] / 4])


def test_l1_is_diagonal(ar08):
    cov = tapered_cov(ar08, 1)
    assert_allclose(cov.matrix(), sample_autocov(ar08, 0)[0] * np.eye(512))


def test_band_entries_and_symmetry(ar08):
    cov = tapered_cov(ar08, 12)
    M = cov.matrix()
    g = sample_autocov(ar08, 12)
    assert_allclose(M[0, 1], (1 - 1 / 12) * g[1], rtol=1e-14)
    assert M[0, 12] == 0.0 and M[5, 17] == 0.0 and M[5, 16] != 0.0
    assert np.array_equal(M, M.T)


def test_psd_random_series():
    rng = np.random.default_rng(0)
    for _ in range(100):
        T = int(rng.integers(20, 200))
        x = rng.standard_normal(T).cumsum() if rng.random() < 0.5 else rng.standard_normal(T)
        l = int(rng.integers(1, T // 2))
        cov = tapered_cov(x, l)
        ev = np.linalg.eigvalsh(cov.matrix())
        assert ev.min() >= -1e-8 * cov.gamma[0]


def test_constant_series_not_psd():
    with pytest.raises(NotPSD):
        tapered_cov(np.ones(64), 4)
    with pytest.raises(ValueError):
        tapered_cov(np.arange(10.0), 11)


def test_resample_moments():
    x = simulate(ProcessModel.iid(4.0), 200, seed=2)
    cov = tapered_cov(x, 1)
    draws = resample(cov, np.random.default_rng(1), 10_000)
    g0 = cov.gamma[0]
    v = draws.var()
    assert abs(v - g0) < 4 * g0 * np.sqrt(2 / draws.size)
    assert resample(cov, np.random.default_rng(1)).shape == (200,)


def test_resample_autocovariance(ar08):
    cov = tapered_cov(ar08, 8)
    draws = resample(cov, np.random.default_rng(7), 20_000)
    n = draws.shape[0] * (draws.shape[1] - 8)
    for h in (0, 1, 3, 7, 8):
        emp = np.mean(draws[:, : 512 - 8] * draws[:, h : 512 - 8 + h])
        target = cov.gamma[h] if h < 8 else 0.0
        # neighbouring products are correlated; allow a generous effective sample size
        tol = 6 * cov.gamma[0] * np.sqrt(2 * 8 / n)
        assert abs(emp - target) < tol
    third = np.mean(draws**3) / cov.gamma[0] ** 1.5
    assert abs(third) < 6 * np.sqrt(15 * 8 / draws.size)


def test_group_covariance_matches_matrix(ar08):
    cov = tapered_cov(ar08, 10)
    M = cov.matrix()
    K, q = 8, 64
    A = np.kron(np.eye(K), np.ones((1, q))) / np.sqrt(q)
    assert_allclose(cov.group_covariance(K), A @ M @ A.T, rtol=1e-12, atol=1e-14)


def test_iid_bootstrap_is_t():
    x = simulate(ProcessModel.iid(), 256, seed=4)
    out = bootstrap_distribution(x, SubsamplingT(8), l=1, reps=10_000, seed=1)
    assert ks_distance(np.abs(out.statistics), lambda s: 2 * stats.t.cdf(s, 7) - 1) <= 0.02


@pytest.mark.parametrize("method", ["series", "group"])
def test_determinism(method, ar08):
    a = bootstrap_distribution(ar08, SubsamplingT(8), reps=999, seed=5, method=method)
    b = bootstrap_distribution(ar08, SubsamplingT(8), reps=999, seed=5, method=method)
    assert a.critical_values == b.critical_values
    assert np.array_equal(a.statistics, b.statistics)


def test_group_and_series_paths_agree():
    x = simulate(ProcessModel.ar1(0.5), 256, seed=8)
    a = bootstrap_distribution(x, SubsamplingT(8), l=6, reps=4000, seed=1, method="series")
    b = bootstrap_distribution(x, SubsamplingT(8), l=6, reps=4000, seed=2, method="group")
    assert stats.ks_2samp(a.statistics, b.statistics).pvalue > 0.001


def test_ar1_critical_value_exceeds_t():
    x = simulate(ProcessModel.ar1(0.5), 256, seed=11)
    out = bootstrap_distribution(x, SubsamplingT(8), reps=9999, seed=3, alphas=(0.05,))
    assert out.critical_values[0.05] > stats.t.ppf(0.975, 7)


def test_critical_values_monotone(ar08):
    out = bootstrap_distribution(ar08, SubsamplingT(8), reps=1999, seed=4, alphas=(0.1, 0.05, 0.01))
    c = out.critical_values
    assert c[0.1] <= c[0.05] <= c[0.01]


def test_critical_value_rank():
    s = np.arange(1.0, 1000.0)
    assert critical_value(s, 0.05) == 950.0
    assert critical_value(s, 0.01) == 990.0


def test_p_value_edges():
    x = simulate(ProcessModel.iid(), 256, seed=6)
    mean = x.mean()
    _, p, out = bootstrap_test(x, mean, SubsamplingT(8), reps=999, seed=1)
    assert abs(out.observed) < 1e-10 and p > 0.99
    _, p, _ = bootstrap_test(x, mean + 100.0, SubsamplingT(8), reps=999, seed=1)
    assert p == 1 / 1000
    with pytest.raises(ValueError):
        BootstrapOutcome(10, np.zeros(10), {}, 0, p_value=1.5)


def test_wald_bootstrap_runs(ar08):
    stat = WaldF(KernelSpec.difference("bartlett"), b=0.2)
    reject, p, out = bootstrap_test(ar08, 0.0, stat, reps=999, seed=2)
    assert out.method == "series" and 0 < p <= 1
    assert np.all(out.statistics >= 0)
    with pytest.raises(ValueError):
        bootstrap_distribution(ar08, stat, reps=999, seed=1, method="group")


def test_wald_rows_match_scalar(ar08):
    stat = WaldF(KernelSpec.difference("qs"), b=0.3)
    y = simulate(ProcessModel.ar1(0.5), 128, seed=1, reps=4)
    assert_allclose(stat.rows(y), [stat.observed(r, 0.0).statistic for r in y], rtol=1e-10)


def test_preconditions(ar08):
    with pytest.raises(ValueError):
        bootstrap_distribution(ar08, SubsamplingT(8), reps=100, seed=1)
    with pytest.raises(ValueError):
        bootstrap_distribution(ar08, SubsamplingT(8), seed=None)
    with pytest.raises(UnequalGroups):
        bootstrap_distribution(ar08, SubsamplingT(7), seed=1)


def test_size_calibration_iid():
    from fixsmooth.harness import _bootstrap_rate

    rate, se, n = _bootstrap_rate(ProcessModel.iid(), 256, 20_000, 999, 1, 1, SubsamplingT(8), 0.05, None)
    assert n == 20_000
    assert abs(rate - 0.05) <= 3 * np.sqrt(0.05 * 0.95 / n)


def test_outcome_csv(tmp_path, ar08):
    _, _, out = bootstrap_test(ar08, 0.0, SubsamplingT(8), reps=999, seed=1)
    write_outcome_csv(out, tmp_path / "b.csv", tmp_path / "s.csv")
    rows = (tmp_path / "b.csv").read_text().splitlines()
    assert rows[0] == "rep,statistic" and len(rows) == 1000
    summ = (tmp_path / "s.csv").read_text().splitlines()
    assert summ[0] == "alpha,critical_value,p_value" and len(summ) == 2
