"""Hot voxel kernels with two interchangeable backends.

The numba backend JIT-compiles the inner loops and is the default whenever
numba imports cleanly. The numpy backend is a pure numpy/scipy fallback that
produces bit-identical results. Selection:

* env var ``RIBEVAL_BACKEND=numpy`` forces the fallback,
* ``RIBEVAL_BACKEND=numba`` requires numba (ImportError if unavailable),
* unset or ``auto`` picks numba when importable, else numpy.

Under ``auto`` the numba import is deferred to the first kernel call so
commands that never touch a kernel do not pay the import cost.
``set_backend()`` switches at runtime (used by tests and the benchmark).
"""

from __future__ import annotations

import os
import warnings

from . import numpy_backend

_BACKENDS = {"numpy": numpy_backend}
_active_name = "numpy"
_auto_fallback_allowed = False


def _load_numba_backend():
    if "numba" not in _BACKENDS:
        from . import numba_backend

        _BACKENDS["numba"] = numba_backend
    return _BACKENDS["numba"]


def set_backend(name: str) -> None:
    """Select the kernel backend, one of {'numba', 'numpy'}."""
    global _active_name, _auto_fallback_allowed
    if name == "numba":
        _load_numba_backend()
    elif name != "numpy":
        raise ValueError(f"unknown kernel backend {name!r}")
    _active_name = name
    _auto_fallback_allowed = False


def get_backend() -> str:
    return _active_name


def _backend_module():
    global _active_name
    if _active_name not in _BACKENDS:
        try:
            _load_numba_backend()
        except ImportError:
            if not _auto_fallback_allowed:
                raise
            warnings.warn("numba unavailable, falling back to numpy kernels",
                          RuntimeWarning)
            _active_name = "numpy"
    return _BACKENDS[_active_name]


def _init_from_env() -> None:
    global _active_name, _auto_fallback_allowed
    choice = os.environ.get("RIBEVAL_BACKEND", "auto").lower()
    if choice == "numpy":
        _active_name = "numpy"
    elif choice == "numba":
        set_backend("numba")
    elif choice in ("auto", ""):
        _active_name = "numba"
        _auto_fallback_allowed = True
    else:
        raise ValueError(f"RIBEVAL_BACKEND={choice!r} is not one of auto/numba/numpy")


def label_components(mask, connectivity):
    """Label a binary volume; returns (int32 labels, component count).

    Labels are assigned 1..K in first-encounter order of the x-fastest scan.
    """
    return _backend_module().label_components(mask, connectivity)


def pair_counts(a, b, na, nb):
    """Joint histogram of two label volumes with values in 0..na / 0..nb.

    Returns an (na+1, nb+1) int64 matrix of co-occurrence counts.
    """
    return _backend_module().pair_counts(a, b, na, nb)


def dilate(mask, radius):
    """Chebyshev (box) dilation of a binary volume, uint8 output."""
    return _backend_module().dilate(mask, radius)


_init_from_env()
