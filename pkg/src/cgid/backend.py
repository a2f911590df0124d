"""Kernel backend selection.

Hot loops (k-means assignment, Hungarian assignment, prototype updates) have
numba-compiled and pure-numpy/python implementations. The env var
``CGID_BACKEND`` picks one:

    auto   - numba when importable, numpy otherwise (default)
    numba  - require numba, fail loudly if missing
    numpy  - force the pure-numpy/python path

The choice is resolved once at import time; ``benchmarks/bench_backends.py``
times both paths side by side.
"""

import os

from .errors import ConfigurationError

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None
    HAVE_NUMBA = False

_choice = os.environ.get("CGID_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ConfigurationError(f"CGID_BACKEND must be auto|numba|numpy, got {_choice!r}")
if _choice == "numba" and not HAVE_NUMBA:
    raise ConfigurationError("CGID_BACKEND=numba but numba is not importable")

USE_NUMBA = HAVE_NUMBA if _choice == "auto" else _choice == "numba"


def jit_or_plain(func):
    """Compile ``func`` with numba when the numba backend is active.

    The function must be written so the interpreted and compiled executions
    perform the same arithmetic in the same order.
    """
    if USE_NUMBA:
        return njit(cache=True)(func)
    return func
