"""Select the compiled core when it is importable, else the numpy twin.

Set ``FIXSMOOTH_PURE_PYTHON=1`` to force the pure-Python kernels.
"""
import os

from fixsmooth import _core_python

_FORCE_PYTHON = os.environ.get("FIXSMOOTH_PURE_PYTHON", "").strip() not in ("", "0")

try:
    if _FORCE_PYTHON:
        raise ImportError("pure-Python kernels requested")
    from fixsmooth import _core as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _core_python
    BACKEND = "python"

HAS_EXTENSION = _impl is not _core_python

lag_products = _impl.lag_products
band_cholesky = _impl.band_cholesky
band_lower_matvec = _impl.band_lower_matvec
ar1_filter = _impl.ar1_filter
subsampling_t_rows = _impl.subsampling_t_rows

__all__ = [
    "BACKEND",
    "HAS_EXTENSION",
    "lag_products",
    "band_cholesky",
    "band_lower_matvec",
    "ar1_filter",
    "subsampling_t_rows",
]
