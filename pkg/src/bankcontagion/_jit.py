"""JIT switch for the numeric kernels.

Kernels are written as plain loops over numpy arrays.  When numba is
available they are compiled with ``numba.njit``; setting the environment
variable ``BANKCONTAGION_DISABLE_NUMBA=1`` (or running without numba
installed) leaves them as ordinary Python, which is slower but produces the
same results.
"""

import os

_FLAG = "BANKCONTAGION_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get(_FLAG, "").strip().lower() not in {
    "1",
    "true",
    "yes",
    "on",
}


def njit(func):
    """Compile ``func`` in nopython mode, or return it untouched when disabled."""
    if not USE_NUMBA:
        return func
    # no fastmath: kernels must stay bit-reproducible against the Python path
    return numba.njit(cache=True, nogil=True)(func)


def python_version(func):
    """Uncompiled implementation of a kernel (the function itself when JIT is off)."""
    return getattr(func, "py_func", func)
