import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate

from fixsmooth.exceptions import NotPSD, TruncationTooCoarse
from fixsmooth.kernels import (
    DIFFERENCE_KERNELS,
    KernelSpec,
    analytic_eigensystem,
    demean,
    kernel_constants,
    nystrom_eigs,
    parzen_exponent,
    scale,
    small_b_eigenvalue,
)

TH = demean(KernelSpec.difference("tukey"))


def test_tukey_hanning_demeaned_eigenvalues():
    eig = nystrom_eigs(TH, n=512, J=3)
    assert abs(eig.eigenvalues[0] - 0.25) <= 1e-3
    assert abs(eig.eigenvalues[1] - 0.0474) <= 1e-3
    assert eig.eigenvalues[2] <= 1e-4


def test_tukey_hanning_matches_closed_form():
    eig = nystrom_eigs(TH, J=3)
    ref = analytic_eigensystem(TH)
    t = np.linspace(0, 1, 101)
    assert_allclose(eig.eigenvalues[:2], ref.eigenvalues, atol=1e-12)
    assert_allclose(eig.evaluate(t, 2), ref.evaluate(t, 2), atol=1e-8)


def test_cosine_single_term():
    k = KernelSpec.cosine([1.0])
    eig = nystrom_eigs(k, J=2, allow_coarse=True)
    assert_allclose(eig.eigenvalues, [0.5, 0.5], atol=1e-12)
    # eigenfunctions span {sqrt2 cos, sqrt2 sin}: projection onto the span is complete
    t, w = eig.nodes, eig.weights
    basis = np.sqrt(2) * np.column_stack([np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)])
    coef = (basis * w[:, None]).T @ eig.grid_values
    assert_allclose(coef.T @ coef, np.eye(2), atol=1e-10)


def test_bartlett_eigenvalue_decay():
    eig = nystrom_eigs(demean(KernelSpec.difference("bartlett", b=0.1)), allow_coarse=True)
    j = np.arange(2, 21)
    slope = np.polyfit(np.log(j), np.log(eig.eigenvalues[1:20]), 1)[0]
    assert -2.5 <= slope <= -1.5


def test_bartlett_truncation_too_coarse():
    with pytest.raises(TruncationTooCoarse):
        nystrom_eigs(KernelSpec.difference("bartlett", b=0.1))


def test_non_psd_rejected():
    # tabulated indefinite kernel
    g = np.linspace(0, 1, 21)
    vals = np.cos(3 * np.pi * np.add.outer(g, g))
    with pytest.raises(NotPSD):
        nystrom_eigs(KernelSpec.tabulated(g, vals), allow_coarse=True)


def test_quadrature_preconditions():
    with pytest.raises(ValueError):
        nystrom_eigs(TH, n=32)
    with pytest.raises(ValueError):
        nystrom_eigs(TH, n=64, J=20)


def test_demean_idempotent():
    k2 = demean(TH)
    r, t = np.meshgrid(np.linspace(0, 1, 9), np.linspace(0, 1, 9))
    assert_allclose(k2(r, t), TH(r, t), atol=1e-10)


def test_demean_cosine_unchanged():
    k = KernelSpec.cosine([0.6, 0.4])
    r, t = np.meshgrid(np.linspace(0, 1, 13), np.linspace(0, 1, 13))
    assert_allclose(demean(k)(r, t), k(r, t), atol=1e-10)


@pytest.mark.parametrize("name", DIFFERENCE_KERNELS)
@pytest.mark.parametrize("b", [1.0, 0.3])
def test_demeaned_rows_integrate_to_zero(name, b):
    k = demean(KernelSpec.difference(name, b=b))
    for t in (0.0, 0.13, 0.5, 0.91):
        pts = sorted({0.0, 1.0, *np.clip([t - b, t, t + b, t - b / 2, t + b / 2], 0, 1)})
        val = integrate.quad(lambda s: float(k(s, t)), 0, 1, points=pts[1:-1], epsabs=1e-12, limit=200)[0]
        assert abs(val) <= 1e-8


def test_scale_examples():
    k = KernelSpec.difference("bartlett")
    assert scale(k, 1.0) == k
    assert_allclose(scale(k, 0.5).base(0.2, 0.5), 0.4)
    assert scale(scale(k, 0.5), 0.5).b == 0.25


def test_small_b_eigenvalue_law_qs():
    b = 0.05
    k = KernelSpec.difference("qs", b=b)
    eig = nystrom_eigs(k, n=1024)
    for j in (1, 2, 3):
        approx = small_b_eigenvalue(k, b, j)
        assert abs(eig.eigenvalues[j - 1] - approx) <= 0.1 * approx


@pytest.mark.parametrize("name, q", [("bartlett", 1), ("parzen", 2), ("qs", 2), ("daniel", 2), ("tukey", 2)])
def test_parzen_exponent_numeric_limit(name, q):
    qq, g = parzen_exponent(name)
    assert qq == q
    k = KernelSpec.difference(name)
    for x in (1e-3, 1e-4):
        assert_allclose((1 - k.univariate(x)) / x**q, g, rtol=2e-3)


def test_kernel_constants():
    c1, c2 = kernel_constants("bartlett")
    assert abs(c1 - 1) < 1e-6 and abs(c2 - 2 / 3) < 1e-6
    assert_allclose(kernel_constants("parzen"), [0.75, 151 / 280], atol=1e-8)
    assert_allclose(kernel_constants("tukey"), [1.0, 0.75], atol=1e-8)
    assert_allclose(kernel_constants("qs"), [1.25, 1.0], atol=1e-8)
    assert_allclose(kernel_constants("daniel"), [1.0, 1.0], atol=1e-8)


@pytest.mark.parametrize("kernel", [TH, KernelSpec.cosine([0.5, 0.3, 0.2]), KernelSpec.difference("qs", b=0.5)],
                         ids=["tukey~", "cosine", "qs"])
def test_spectral_reconstruction(kernel):
    eig = nystrom_eigs(kernel, n=512)
    g = np.linspace(0, 1, 20)
    recon = eig.reconstruct(g, g)
    assert np.max(np.abs(recon - kernel(g[:, None], g[None, :]))) <= 1e-3


def test_truncated_tukey_hanning_is_not_psd():
    # its spectral window has negative side lobes once b < 1
    with pytest.raises(NotPSD):
        nystrom_eigs(demean(KernelSpec.difference("tukey", b=0.5)), allow_coarse=True)


@pytest.mark.parametrize("name", ["bartlett", "parzen", "qs", "daniel"])
def test_eigensystem_invariants(name):
    k = demean(KernelSpec.difference(name, b=0.5))
    eig = nystrom_eigs(k, allow_coarse=True)
    lam, phi, w = eig.eigenvalues, eig.grid_values, eig.weights
    assert np.all(np.diff(lam) <= 1e-14) and np.all(lam >= 0)
    assert_allclose((phi * w[:, None]).T @ phi, np.eye(eig.J), atol=1e-6)
    trace = integrate.quad(lambda r: float(k(r, r)), 0, 1, limit=200)[0]
    assert lam.sum() <= trace + 1e-6
    live = lam > 1e-10
    assert np.all(np.abs(w @ phi[:, live]) <= 1e-6)


def test_sign_convention_and_text_export(tmp_path):
    eig = nystrom_eigs(TH, J=3)
    assert np.all(eig.grid_values[0, :2] > 0)
    text = eig.to_text(tmp_path / "e.txt")
    lines = text.strip().splitlines()
    assert lines[0].startswith("# nodes")
    assert len(lines) == 1 + eig.J
    first = np.array(lines[1].split(), dtype=float)
    assert_allclose(first[0], eig.eigenvalues[0])
    assert first.size == 1 + eig.n


def test_cosine_coefficients_validated():
    with pytest.raises(ValueError):
        KernelSpec.cosine([0.5, 0.2])
    with pytest.raises(ValueError):
        KernelSpec.difference("triangle")


@pytest.mark.parametrize("name", ["qs", "daniel"])
@pytest.mark.parametrize("b", [0.5, 0.1])
def test_interpolated_eigenfunctions_mean_zero(name, b):
    # independent high-order rule applied to the continuous evaluator
    u, w = np.polynomial.legendre.leggauss(3000)
    eig = nystrom_eigs(demean(KernelSpec.difference(name, b=b)))
    live = eig.eigenvalues > 1e-10
    assert np.max(np.abs((w / 2) @ eig.evaluate((u + 1) / 2)[:, live])) <= 1e-6
