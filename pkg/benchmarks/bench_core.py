"""Compiled core against the pure-Python kernels.

Run ``python benchmarks/bench_core.py``.  Each kernel is timed on both
implementations with identical inputs and the outputs are compared.
"""
import argparse
import timeit

import numpy as np

from fixsmooth import _core_python

try:
    from fixsmooth import _core
except ImportError:  # pragma: no cover
    _core = None


def cases(rng):
    T = 1024
    y = rng.standard_normal((256, T))
    ab = np.zeros((8, T))
    g = 0.5 ** np.arange(8)
    g[0] = 2.0
    for k in range(8):
        ab[k, : T - k] = g[k]
    f, _ = _core_python.band_cholesky(ab)
    z = rng.standard_normal((256, T))
    return {
        "lag_products (256 x 1024, 64 lags)": ("lag_products", (y, 64)),
        "subsampling_t_rows (8192 x 256, K=8)": ("subsampling_t_rows", (rng.standard_normal((8192, 256)), 8, 0.0)),
        "band_cholesky (T=1024, l=8)": ("band_cholesky", (ab,)),
        "band_lower_matvec (256 x 1024, l=8)": ("band_lower_matvec", (f, z)),
        "ar1_filter (256 x 1024)": ("ar1_filter", (y, 0.5)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _core is None:
        print("compiled core not available; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':42s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s} {'max |diff|':>11s}")
    for label, (name, argv) in cases(rng).items():
        py, cy = getattr(_core_python, name), getattr(_core, name)
        argv = tuple(np.ascontiguousarray(a) if isinstance(a, np.ndarray) else a for a in argv)
        t_py = min(timeit.repeat(lambda: py(*argv), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: cy(*argv), number=1, repeat=args.repeat)) * 1e3
        a, b = py(*argv), cy(*argv)
        a, b = (a[0], b[0]) if isinstance(a, tuple) else (a, b)
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        print(f"{label:42s} {t_py:10.2f} {t_cy:10.2f} {t_py / t_cy:9.1f}x {diff:11.2e}")


if __name__ == "__main__":
    main()
