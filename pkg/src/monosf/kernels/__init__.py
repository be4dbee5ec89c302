"""Hot per-pixel kernels.

The compiled extension ``_ckernels`` is used when it was built; otherwise the
NumPy versions in ``_pykernels`` are loaded.  Setting ``MONOSF_PURE_PYTHON=1``
forces the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("MONOSF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

census_transform = _impl.census_transform
popcount24 = _impl.popcount24
unary_terms = _impl.unary_terms

__all__ = ["BACKEND", "census_transform", "popcount24", "unary_terms"]
