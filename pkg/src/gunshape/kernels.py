"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise (or when
``GUNSHAPE_PURE_PYTHON=1``) the numpy fallback is loaded. ``BACKEND`` names
the active implementation.
"""
import os

from . import _kernels_py

if os.environ.get("GUNSHAPE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

find_spans = _impl.find_spans
basis_ders = _impl.basis_ders
element_matrices = _impl.element_matrices
interp_field = _impl.interp_field
track_rk4 = _impl.track_rk4

PENDING, RUNNING, EXITED, LOST = (
    _kernels_py.PENDING, _kernels_py.RUNNING, _kernels_py.EXITED, _kernels_py.LOST)


def compiled_available():
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
