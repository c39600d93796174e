import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from fixsmooth import distributions as d
from fixsmooth.exceptions import NonFinite


@pytest.mark.parametrize("k", [1, 2, 3, 7, 31])
def test_chi2_against_scipy_stats(k):
    x = np.linspace(0.01, 30, 50)
    assert_allclose(d.chi2_cdf(k, x), stats.chi2.cdf(x, k), rtol=1e-12)
    assert_allclose(d.chi2_pdf(k, x), stats.chi2.pdf(x, k), rtol=1e-11)
    assert_allclose(d.chi2_quantile(k, [0.05, 0.5, 0.95]), stats.chi2.ppf([0.05, 0.5, 0.95], k), rtol=1e-10)


def test_chi2_boundary():
    assert d.chi2_cdf(3, 0.0) == 0.0
    assert d.chi2_cdf(3, -1.0) == 0.0
    assert d.chi2_pdf(1, 0.0) == 0.0


@pytest.mark.parametrize("x", [0.3, 1.0, 3.84, 9.0])
def test_g1_derivatives_finite_difference(x):
    h = 1e-5
    assert_allclose(d.g1_prime(x), (d.g1(x + h) - d.g1(x - h)) / (2 * h), rtol=1e-7)
    assert_allclose(d.g1_second(x), (d.g1_prime(x + h) - d.g1_prime(x - h)) / (2 * h), rtol=1e-6)


def test_t_functions():
    assert_allclose(d.t_quantile(7, 0.975), stats.t.ppf(0.975, 7), rtol=1e-12)
    assert_allclose(d.t_cdf(3, 1.5), stats.t.cdf(1.5, 3), rtol=1e-12)
    assert_allclose(d.t_abs_cdf(7, d.t_quantile(7, 0.975)), 0.95, rtol=1e-12)
    assert d.t_abs_cdf(7, 0.0) == 0.0
    assert_allclose(d.norm_quantile(0.975), 1.959963984540054)


def test_noncentral_t_mean():
    rng = np.random.default_rng(0)
    s = d.noncentral_t_sample(30, 2.0, rng, 200_000)
    assert_allclose(s.mean(), stats.nct.mean(30, 2.0), atol=0.01)


def test_mc_expect_known_moments():
    est = d.mc_expect(lambda v: v[:, 0] ** 2, 1, 100_000, seed=1)
    assert abs(est.value - 1.0) < 4 * est.std_error
    assert_allclose(est.std_error, np.sqrt(2 / 100_000), rtol=0.05)


def test_mc_expect_multi_column():
    est = d.mc_expect(lambda v: np.column_stack([v[:, 0], v[:, 1] ** 2]), 2, 50_000, seed=2)
    assert est.value.shape == (2,)
    assert np.all(np.abs(est.value - [0, 1]) < 4 * est.std_error)


def test_mc_expect_thread_invariance():
    f = lambda v: np.exp(v[:, 0] / 3) * v[:, 1]  # noqa: E731
    a = d.mc_expect(f, 2, 40_000, seed=5, workers=1)
    b = d.mc_expect(f, 2, 40_000, seed=5, workers=4)
    assert a.value == b.value and a.std_error == b.std_error


def test_block_prefix_property():
    # replication r sees the same normals whatever the total count
    seen = []
    f = lambda v: (seen.append(v.copy()), v[:, 0])[1]  # noqa: E731
    d.mc_expect(f, 3, 9000, seed=8)
    first = seen[0][:100].copy()
    seen.clear()
    d.mc_expect(f, 3, 1000, seed=8)
    assert_allclose(seen[0][:100], first, rtol=0, atol=0)


def test_mc_expect_rejects_nonfinite_and_small_reps():
    with pytest.raises(NonFinite):
        d.mc_expect(lambda v: np.full(len(v), np.nan), 1, 2000, seed=1)
    with pytest.raises(ValueError):
        d.mc_expect(lambda v: v[:, 0], 1, 10, seed=1)


def test_seed_required():
    with pytest.raises(ValueError):
        d.block_rng(None, 0)


def test_mcexpectation_validation():
    with pytest.raises(ValueError):
        d.MCExpectation(0.0, -1.0, 10)
