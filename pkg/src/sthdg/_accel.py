"""Optional numba acceleration.

Kernels are written once as plain Python loops and compiled with
``numba.njit`` when numba is importable and ``STHDG_DISABLE_NUMBA`` is not
set to a truthy value. Callers dispatch through :data:`USE_NUMBA` to pick
between the compiled loops and the vectorised numpy path.
"""

import os

_FLAG = os.environ.get("STHDG_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError
    import numba

    NUMBA_AVAILABLE = True
except ImportError:
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE


def njit(*args, **kwargs):
    """``numba.njit`` if available, otherwise return the function untouched."""
    if NUMBA_AVAILABLE:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(fn):
        return fn

    return wrap
