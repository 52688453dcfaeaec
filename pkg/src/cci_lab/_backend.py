"""Kernel backend selection.

Hot loops are written twice: a numba ``@njit`` version and a vectorized
numpy twin. Setting ``ACPO_DISABLE_NUMBA=1`` (or running without numba
installed) selects the numpy path for the whole process.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _env_disabled():
    return os.environ.get("ACPO_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def njit(func):
    """Compile with numba when available, otherwise return ``func`` unchanged."""
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
