"""Bivariate smoothing kernels and their spectral decompositions.

A :class:`KernelSpec` describes ``G_b(r, t) = G(r / b, t / b)`` on ``[0, 1]^2``,
optionally demeaned after scaling.  Difference kernels ``K(r - t)`` carry a
closed-form antiderivative so that row means, and hence demeaning, are exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, special

from fixsmooth.exceptions import NotPSD, TruncationTooCoarse

__all__ = [
    "DIFFERENCE_KERNELS",
    "KernelSpec",
    "EigenSystem",
    "demean",
    "scale",
    "nystrom_eigs",
    "analytic_eigensystem",
    "parzen_exponent",
    "kernel_constants",
    "small_b_eigenvalue",
    "load_cosine_coefficients",
]

DIFFERENCE_KERNELS = ("bartlett", "parzen", "qs", "daniel", "tukey")
_QS_A = 6.0 * np.pi / 5.0

# (q, g_q) from the expansion 1 - K(x) = g_q |x|^q + o(|x|^q)
_PARZEN_TABLE = {
    "bartlett": (1, 1.0),
    "parzen": (2, 6.0),
    "qs": (2, 18.0 * np.pi**2 / 125.0),
    "daniel": (2, np.pi**2 / 6.0),
    "tukey": (2, np.pi**2 / 4.0),
}

REL_NEGLIGIBLE = 1e-6
REL_ZERO = 1e-10
PSD_TOL = 1e-8
J_CAP = 200


# ---------------------------------------------------------------------------
# univariate kernels and antiderivatives
# ---------------------------------------------------------------------------
def _bartlett(x):
    return np.maximum(1.0 - np.abs(x), 0.0)


def _bartlett_int(x):
    u = np.minimum(np.abs(x), 1.0)
    return np.sign(x) * (u - u * u / 2.0)


def _parzen(x):
    u = np.abs(x)
    return np.where(u <= 0.5, 1.0 - 6.0 * u**2 + 6.0 * u**3, np.where(u <= 1.0, 2.0 * (1.0 - u) ** 3, 0.0))


def _parzen_int(x):
    u = np.minimum(np.abs(x), 1.0)
    inner = u - 2.0 * u**3 + 1.5 * u**4
    outer = 0.34375 + (0.0625 - (1.0 - u) ** 4) / 2.0
    return np.sign(x) * np.where(u <= 0.5, inner, outer)


def _qs(x):
    z = _QS_A * np.asarray(x, dtype=float)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    out = 3.0 * (np.sin(zs) - zs * np.cos(zs)) / zs**3
    series = 1.0 - z**2 / 10.0 + z**4 / 280.0
    return np.where(small, series, out)


def _qs_int(x):
    z = _QS_A * np.asarray(x, dtype=float)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    si = special.sici(zs)[0]
    big = si / 2.0 + (zs * np.cos(zs) - np.sin(zs)) / (2.0 * zs**2)
    series = z / 3.0 - z**3 / 30.0
    return 3.0 / _QS_A * np.where(small, series, big)


def _daniel(x):
    return np.sinc(x)


def _daniel_int(x):
    return special.sici(np.pi * np.asarray(x, dtype=float))[0] / np.pi


def _tukey(x):
    u = np.abs(x)
    return np.where(u <= 1.0, (1.0 + np.cos(np.pi * u)) / 2.0, 0.0)


def _tukey_int(x):
    u = np.minimum(np.abs(x), 1.0)
    return np.sign(x) * (u + np.sin(np.pi * u) / np.pi) / 2.0


_UNIVARIATE = {
    "bartlett": (_bartlett, _bartlett_int),
    "parzen": (_parzen, _parzen_int),
    "qs": (_qs, _qs_int),
    "daniel": (_daniel, _daniel_int),
    "tukey": (_tukey, _tukey_int),
}


# ---------------------------------------------------------------------------
# kernel specification
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class KernelSpec:
    """A bivariate kernel on ``[0, 1]^2``.

    ``form`` is one of the difference kernels, ``"cosine"`` (coefficients
    ``lambda_j`` of ``sum_j lambda_j cos(2 pi j (r - t))``) or
    ``"tabulated"`` (values on a square grid, bilinearly interpolated).
    """

    form: str
    b: float = 1.0
    demeaned: bool = False
    coefficients: tuple = ()
    grid: tuple = ()
    values: tuple = ()
    _cache: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __post_init__(self):
        if self.form not in DIFFERENCE_KERNELS + ("cosine", "tabulated"):
            raise ValueError(f"unknown kernel form {self.form!r}")
        if not 0.0 < self.b <= 1.0:
            raise ValueError("b must lie in (0, 1]")
        if self.form == "cosine":
            lam = np.asarray(self.coefficients, dtype=float)
            if lam.size == 0 or np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-8:
                raise ValueError("cosine-series coefficients must be non-negative and sum to 1")
        if self.form == "tabulated" and len(self.grid) < 2:
            raise ValueError("tabulated kernel needs a grid")

    # constructors -----------------------------------------------------------
    @classmethod
    def difference(cls, name: str, b: float = 1.0, demeaned: bool = False):
        name = {"tukey-hanning": "tukey", "tukeyhanning": "tukey", "daniell": "daniel"}.get(name.lower(), name.lower())
        return cls(name, b=float(b), demeaned=demeaned)

    @classmethod
    def cosine(cls, coefficients, b: float = 1.0, demeaned: bool = False):
        return cls("cosine", b=float(b), demeaned=demeaned, coefficients=tuple(float(c) for c in coefficients))

    @classmethod
    def tabulated(cls, grid, values, demeaned: bool = False):
        values = np.asarray(values, dtype=float)
        return cls("tabulated", demeaned=demeaned, grid=tuple(np.asarray(grid, float)), values=tuple(map(tuple, values)))

    @property
    def is_difference(self) -> bool:
        return self.form != "tabulated"

    @property
    def name(self) -> str:
        tag = self.form
        if self.demeaned:
            tag += "~"
        return f"{tag}(b={self.b:g})"

    # evaluation -------------------------------------------------------------
    def univariate(self, x):
        """``K(x)`` for difference kernels (unscaled)."""
        x = np.asarray(x, dtype=float)
        if self.form == "cosine":
            j = np.arange(1, len(self.coefficients) + 1)
            return np.cos(2.0 * np.pi * np.multiply.outer(x, j)) @ np.asarray(self.coefficients)
        if self.form == "tabulated":
            raise TypeError("tabulated kernels are not difference kernels")
        return _UNIVARIATE[self.form][0](x)

    def _antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.form == "cosine":
            j = np.arange(1, len(self.coefficients) + 1)
            return np.sin(2.0 * np.pi * np.multiply.outer(x, j)) @ (np.asarray(self.coefficients) / (2.0 * np.pi * j))
        return _UNIVARIATE[self.form][1](x)

    def _interpolator(self):
        if "interp" not in self._cache:
            from scipy.interpolate import RegularGridInterpolator

            grid = np.asarray(self.grid)
            self._cache["interp"] = RegularGridInterpolator((grid, grid), np.asarray(self.values))
        return self._cache["interp"]

    def base(self, r, t):
        """The scaled, not demeaned, kernel ``G_b(r, t)``."""
        r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
        if self.form == "tabulated":
            pts = np.stack([np.clip(r / self.b, 0, 1), np.clip(t / self.b, 0, 1)], axis=-1)
            return self._interpolator()(pts.reshape(-1, 2)).reshape(r.shape)
        return self.univariate((r - t) / self.b)

    def row_mean(self, t):
        """``int_0^1 G_b(s, t) ds`` (exact for difference kernels)."""
        t = np.asarray(t, dtype=float)
        if self.is_difference:
            return self.b * (self._antiderivative((1.0 - t) / self.b) + self._antiderivative(t / self.b))
        nodes, weights = _gauss_legendre(400)
        out = self.base(nodes[:, None], np.atleast_1d(t)[None, :]).T @ weights
        return out.reshape(t.shape)

    def grand_mean(self) -> float:
        if "grand" not in self._cache:
            edges = np.unique(np.clip([0.0, self.b / 2, self.b, 1 - self.b, 1 - self.b / 2, 1.0], 0.0, 1.0))
            nodes, weights = _composite_gauss(edges, 64, 20)
            self._cache["grand"] = float(np.asarray(self.row_mean(nodes)) @ weights)
        return self._cache["grand"]

    def __call__(self, r, t):
        out = self.base(r, t)
        if self.demeaned:
            out = out - self.row_mean(r) - self.row_mean(t) + self.grand_mean()
        return out


def demean(kernel: KernelSpec) -> KernelSpec:
    """The four-term demeaned kernel (idempotent)."""
    if kernel.demeaned:
        return kernel
    return replace(kernel, demeaned=True, _cache={})


def scale(kernel: KernelSpec, b: float) -> KernelSpec:
    """``G_b(r, t) = G(r / b, t / b)``; bandwidths compose multiplicatively.

    Demeaning, if set, is applied after scaling.
    """
    if not 0.0 < b <= 1.0:
        raise ValueError("b must lie in (0, 1]")
    return replace(kernel, b=kernel.b * b, _cache={})


def load_cosine_coefficients(path) -> tuple:
    vals = [float(tok) for line in Path(path).read_text().splitlines() for tok in line.split("#", 1)[0].split()]
    return tuple(vals)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------
def _gauss_legendre(n):
    u, w = np.polynomial.legendre.leggauss(n)
    return (u + 1.0) / 2.0, w / 2.0


def _composite_gauss(edges, panels_total, order):
    edges = np.asarray(edges, dtype=float)
    lengths = np.diff(edges)
    nodes, weights = [], []
    u, w = np.polynomial.legendre.leggauss(order)
    for a, length in zip(edges[:-1], lengths):
        k = max(1, int(round(panels_total * length)))
        sub = np.linspace(a, a + length, k + 1)
        for lo, hi in zip(sub[:-1], sub[1:]):
            nodes.append(lo + (u + 1.0) * (hi - lo) / 2.0)
            weights.append(w * (hi - lo) / 2.0)
    return np.concatenate(nodes), np.concatenate(weights)


def quadrature_rule(kernel: KernelSpec, n: int):
    """Gauss-Legendre nodes on [0, 1]; composite panels split at multiples of
    ``b`` (and ``b/2`` for Parzen) for kernels with kinks."""
    if kernel.form not in ("bartlett", "parzen") or kernel.b >= 1.0:
        return _gauss_legendre(n)
    step = kernel.b / 2.0 if kernel.form == "parzen" else kernel.b
    edges = np.unique(np.r_[np.arange(0.0, 1.0, step), 1.0])
    edges = edges[np.r_[True, np.diff(edges) > 1e-12]]
    lengths = np.diff(edges)
    counts = np.maximum(4, np.floor(n * lengths).astype(int))
    while counts.sum() > n and counts.max() > 4:
        counts[np.argmax(counts)] -= 1
    while counts.sum() < n:
        counts[np.argmax(lengths / counts)] += 1
    nodes, weights = [], []
    for a, length, k in zip(edges[:-1], lengths, counts):
        x, w = _gauss_legendre(int(k))
        nodes.append(a + length * x)
        weights.append(length * w)
    return np.concatenate(nodes), np.concatenate(weights)


# ---------------------------------------------------------------------------
# eigensystems
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Truncated spectral decomposition ``{lambda_j, phi_j}``.

    ``grid_values[:, j]`` holds ``phi_j`` at the quadrature ``nodes``;
    :meth:`evaluate` gives ``phi_j`` at arbitrary points.
    """

    eigenvalues: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    grid_values: np.ndarray
    evaluator: Callable = field(repr=False)
    kernel: KernelSpec | None = None
    source: str = "nystrom"

    @property
    def J(self) -> int:
        return len(self.eigenvalues)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def active(self) -> int:
        """Number of eigenvalues that are numerically nonzero."""
        lam = self.eigenvalues
        return int(np.sum(lam > REL_ZERO * lam[0])) if lam.size else 0

    def evaluate(self, t, J: int | None = None) -> np.ndarray:
        """``phi_j(t)`` for ``j < J`` as an array of shape ``(len(t), J)``."""
        J = self.J if J is None else min(J, self.J)
        return self.evaluator(np.atleast_1d(np.asarray(t, dtype=float)), J)

    def reconstruct(self, r, t, J: int | None = None):
        J = self.J if J is None else J
        pr, pt = self.evaluate(r, J), self.evaluate(t, J)
        return (pr * self.eigenvalues[:J]) @ pt.T

    def truncated(self, J: int) -> "EigenSystem":
        return replace(self, eigenvalues=self.eigenvalues[:J], grid_values=self.grid_values[:, :J])

    def to_text(self, path=None) -> str:
        """One line per eigenpair: ``lambda_j`` followed by ``phi_j`` on the grid."""
        lines = ["# nodes " + " ".join(f"{x:.17g}" for x in self.nodes)]
        for j, lam in enumerate(self.eigenvalues):
            lines.append(" ".join([f"{lam:.17g}", *(f"{v:.17g}" for v in self.grid_values[:, j])]))
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _fix_signs(vectors):
    scale_ = np.abs(vectors).max(axis=0)
    for j in range(vectors.shape[1]):
        nz = np.nonzero(np.abs(vectors[:, j]) > 1e-8 * scale_[j])[0]
        if nz.size and vectors[nz[0], j] < 0:
            vectors[:, j] = -vectors[:, j]
    return vectors


def choose_truncation(eigenvalues, n, cap=J_CAP):
    lam = np.asarray(eigenvalues)
    limit = min(cap, n // 4, lam.size)
    small = np.nonzero(lam[:limit] <= REL_NEGLIGIBLE * lam[0])[0]
    if small.size == 0:
        return limit, False
    return int(small[0]) + 1, True


def nystrom_eigs(kernel: KernelSpec, n: int = 512, J: int | None = None, allow_coarse: bool = False) -> EigenSystem:
    """Nyström solution of the kernel's Fredholm eigenproblem.

    Parameters
    ----------
    kernel : KernelSpec
    n : int
        Quadrature size (``n >= 64`` and ``n >= 4 J``).
    J : int, optional
        Truncation.  By default the smallest ``j`` with
        ``lambda_j / lambda_1 <= 1e-6``, capped at ``min(200, n // 4)``.
    allow_coarse : bool
        Accept a truncation whose tail is not negligible (slowly decaying
        spectra such as Bartlett's).

    Raises
    ------
    NotPSD
        If an eigenvalue is below ``-1e-8``.
    TruncationTooCoarse
        If ``lambda_J / lambda_1 > 1e-6`` and ``allow_coarse`` is false.
    """
    if n < 64 or (J is not None and n < 4 * J):
        raise ValueError("need n >= 64 and n >= 4 J")
    nodes, weights = quadrature_rule(kernel, n)
    gmat = kernel.base(nodes[:, None], nodes[None, :])
    gmat = (gmat + gmat.T) / 2.0
    if kernel.demeaned:
        # Nystrom-consistent demeaning: quadrature row means, so the discrete
        # operator has exactly mean-zero eigenvectors
        rmean = gmat @ weights
        gmean = weights @ rmean
        gmat = gmat - rmean[:, None] - rmean[None, :] + gmean
    else:
        rmean = gmean = None
    sw = np.sqrt(weights)
    lam, vec = np.linalg.eigh(sw[:, None] * gmat * sw[None, :])
    order = np.argsort(lam)[::-1]
    lam, vec = lam[order], vec[:, order]
    if lam[-1] < -PSD_TOL:
        raise NotPSD(f"{kernel.name}: eigenvalue {lam[-1]:.3g} < -{PSD_TOL:g}")
    lam = np.where(lam < 0.0, 0.0, lam)
    if J is None:
        J, ok = choose_truncation(lam, n)
    else:
        ok = lam[J - 1] <= REL_NEGLIGIBLE * lam[0]
    if not ok and not allow_coarse:
        raise TruncationTooCoarse(
            f"{kernel.name}: lambda_J/lambda_1 = {lam[J - 1] / lam[0]:.3g} > {REL_NEGLIGIBLE:g} at J={J}"
        )
    phi = _fix_signs(vec[:, :J] / sw[:, None])
    lam = lam[:J].copy()

    def evaluator(t, k):
        gt = kernel.base(t[:, None], nodes[None, :])
        if rmean is not None:
            gt = gt - (gt @ weights)[:, None] - rmean[None, :] + gmean
        out = np.empty((t.size, k))
        live = lam[:k] > REL_ZERO * lam[0]
        if live.any():
            out[:, live] = (gt * weights) @ phi[:, :k][:, live] / lam[:k][live]
        for j in np.nonzero(~live)[0]:
            # null-space directions: the interpolation formula is ill-posed
            out[:, j] = np.interp(t, nodes, phi[:, j])
        return out

    return EigenSystem(lam, nodes, weights, phi, evaluator, kernel, "nystrom")


def analytic_eigensystem(kernel: KernelSpec, n: int = 512) -> EigenSystem:
    """Closed-form eigenpairs where known: cosine series (any b = 1) and the
    demeaned Tukey-Hanning kernel at b = 1."""
    nodes, weights = _gauss_legendre(n)
    if kernel.form == "cosine" and kernel.b == 1.0:
        coef = np.asarray(kernel.coefficients)
        freqs = np.repeat(np.arange(1, coef.size + 1), 2)
        kinds = np.tile([0, 1], coef.size)
        lam = np.repeat(coef / 2.0, 2)
        keep = lam > 0
        order = np.argsort(-lam[keep], kind="stable")
        freqs, kinds, lam = freqs[keep][order], kinds[keep][order], lam[keep][order]

        def evaluator(t, k):
            arg = 2.0 * np.pi * np.outer(t, freqs[:k])
            return np.sqrt(2.0) * np.where(kinds[:k] == 0, np.cos(arg), np.sin(arg))

    elif kernel.form == "tukey" and kernel.b == 1.0 and kernel.demeaned:
        norm2 = 0.5 - 4.0 / np.pi**2
        lam = np.array([0.25, norm2 / 2.0])

        def evaluator(t, k):
            cols = [np.sqrt(2.0) * np.cos(np.pi * t), (np.sin(np.pi * t) - 2.0 / np.pi) / np.sqrt(norm2)]
            return np.column_stack(cols[:k])

    else:
        raise ValueError(f"no closed-form eigensystem for {kernel.name}")
    raw = evaluator(nodes, lam.size)
    signs = np.sign(_fix_signs(raw.copy())[0] * raw[0])
    signs[signs == 0] = 1.0

    def signed(t, k, _f=evaluator):
        return _f(t, k) * signs[:k]

    return EigenSystem(lam, nodes, weights, raw * signs, signed, kernel, "analytic")


def small_b_eigenvalue(kernel: KernelSpec, b: float, j: int) -> float:
    """Small-bandwidth law ``b c1 - (pi^2 j^2 b^3 / 2) int r^2 K(r) dr``."""
    c1, _ = kernel_constants(kernel)
    return b * c1 - np.pi**2 * j**2 * b**3 / 2.0 * _second_moment(kernel)


# ---------------------------------------------------------------------------
# kernel constants
# ---------------------------------------------------------------------------
def _kernel_name(k):
    return k.form if isinstance(k, KernelSpec) else KernelSpec.difference(k).form


def parzen_exponent(kernel) -> tuple[int, float]:
    """Parzen characteristic exponent ``q`` and ``g_q`` of a difference kernel."""
    name = _kernel_name(kernel)
    if name == "cosine":
        coef = np.asarray(kernel.coefficients)
        j = np.arange(1, coef.size + 1)
        return 2, float(2.0 * np.pi**2 * np.sum(coef * j**2))
    if name not in _PARZEN_TABLE:
        raise ValueError(f"{name} is not a built-in difference kernel")
    return _PARZEN_TABLE[name]


def _second_moment(kernel) -> float:
    name = _kernel_name(kernel)
    if name == "qs":
        # minus the curvature at 0 of the (parabolic) spectral window
        return 5.0 / (2.0 * _QS_A**2)
    if name == "daniel":
        return 0.0
    f = _UNIVARIATE[name][0]
    return 2.0 * integrate.quad(lambda x: x * x * f(x), 0.0, 1.0, points=[0.5], epsabs=1e-13)[0]


def kernel_constants(kernel) -> tuple[float, float]:
    """``c1 = int K`` and ``c2 = int K^2`` over the real line."""
    name = _kernel_name(kernel)
    if name not in _UNIVARIATE:
        raise ValueError(f"{name} is not a built-in difference kernel")
    f, fint = _UNIVARIATE[name]
    if name in ("qs", "daniel"):
        c1 = 2.0 * float(fint(1e12))
        # K^2 decays at least like x^-2: integrate whole periods, then add the
        # asymptotic tail
        span = 2000.0 if name == "daniel" else 400.0
        edges = np.arange(0.0, span + 1.0)
        body = sum(integrate.quad(lambda x: f(x) ** 2, a, a + 1.0, epsabs=1e-14)[0] for a in edges[:-1])
        tail = 1.0 / (2.0 * np.pi**2 * span) if name == "daniel" else 9.0 / (2.0 * 3.0 * _QS_A**4 * span**3)
        c2 = 2.0 * (body + tail)
    else:
        c1 = 2.0 * integrate.quad(f, 0.0, 1.0, points=[0.5], epsabs=1e-13)[0]
        c2 = 2.0 * integrate.quad(lambda x: f(x) ** 2, 0.0, 1.0, points=[0.5], epsabs=1e-13)[0]
    return float(c1), float(c2)
