"""Hot-kernel backend selection.

The compiled Cython extension is preferred when available; the vectorized
numpy lane is the fallback. Set DEPTHFUSE_BACKEND=numpy (or =cython) to force
one side, e.g. for the benchmark in benchmarks/bench_kernels.py.
"""

import os

from . import _numpy_impl

_requested = os.environ.get("DEPTHFUSE_BACKEND", "auto").lower()

_impl = None
if _requested in ("auto", "cython"):
    try:
        from . import _cython_impl as _impl
    except ImportError:
        if _requested == "cython":
            raise
        _impl = None
if _impl is None:
    _impl = _numpy_impl

backend_name = _impl.BACKEND

box_filter = _impl.box_filter
sobel = _impl.sobel
resize_bilinear = _impl.resize_bilinear
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward

numpy_impl = _numpy_impl


def get_impl(name):
    """Return a specific backend module by name ('numpy' or 'cython')."""
    if name == "numpy":
        return _numpy_impl
    if name == "cython":
        from . import _cython_impl
        return _cython_impl
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    """Names of importable backends, numpy first."""
    names = ["numpy"]
    try:
        get_impl("cython")
        names.append("cython")
    except ImportError:
        pass
    return names
