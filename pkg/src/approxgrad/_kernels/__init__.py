"""Hot LUT-GEMM kernels.

The compiled Cython module is used when it was built; otherwise the numpy
implementation is selected. Set ``APPROXGRAD_PURE=1`` to force the fallback.
Both backends accumulate in the same order and give bit-identical results.
"""

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("APPROXGRAD_PURE"):
        raise ImportError("pure backend requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "numpy"


def available_backends():
    names = ["numpy"]
    try:
        from . import _ckernels  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name=None):
    """Kernel module for ``name`` (``"cython"``/``"numpy"``); default is the active one."""
    if name is None:
        return _impl
    if name == "numpy":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def lut_gemm(widx, xidx, table, n, backend=None):
    return get_backend(backend).lut_gemm(_i64(widx), _i64(xidx), _i64(table), int(n))


def lut_backward_x(dy, widx, xidx, grad, a, b, backend=None):
    return get_backend(backend).lut_backward_x(_f64(dy), _i64(widx), _i64(xidx), _f64(grad), int(a), int(b))


def lut_backward_w(dy, widx, xidx, grad, a, b, backend=None):
    return get_backend(backend).lut_backward_w(_f64(dy), _i64(widx), _i64(xidx), _f64(grad), int(a), int(b))
