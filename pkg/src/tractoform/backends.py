"""Kernel backend selection.

The pairwise mean-closest-point kernels dominate runtime. They exist in two
interchangeable implementations: numba-jitted loops (default) and a pure-numpy
vectorized fallback. Select with the TRACTOFORM_BACKEND env var ("numba" or
"numpy") or set_backend(); benchmarks/bench_kernels.py compares both.
"""

from __future__ import annotations

import os

BACKEND_ENV = "TRACTOFORM_BACKEND"
THREADS_ENV = "TRACTOFORM_THREADS"

# skip numba's TBB probe (broken TBB builds warn noisily); omp is the next layer
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

_VALID = ("numba", "numpy")
_active = None


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _default_backend() -> str:
    name = os.environ.get(BACKEND_ENV, "").strip().lower()
    if name:
        if name not in _VALID:
            raise ValueError(f"{BACKEND_ENV} must be one of {_VALID}, got {name!r}")
        if name == "numba" and not _numba_available():
            raise ValueError(f"{BACKEND_ENV}=numba but numba is not importable")
        return name
    return "numba" if _numba_available() else "numpy"


def get_backend() -> str:
    global _active
    if _active is None:
        _active = _default_backend()
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    _active = name


def kernels():
    """Return the active kernel module (lazy import keeps numpy-only installs working)."""
    if get_backend() == "numba":
        from . import _kernels_numba as mod
    else:
        from . import _kernels_numpy as mod
    return mod


def set_threads(n: int | None) -> int:
    """Cap kernel parallelism. Resolution order: explicit n, TRACTOFORM_THREADS,
    all available cores. Only the numba backend is multi-threaded."""
    if n is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        n = int(env) if env else (os.cpu_count() or 1)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    n = min(n, os.cpu_count() or 1)
    if get_backend() == "numba":
        import numba

        numba.set_num_threads(n)
    return n
