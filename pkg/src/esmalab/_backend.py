"""Kernel backend selection.

Hot loops ship in two flavours: a numba ``@njit`` kernel and a pure-numpy
fallback.  The numba path is used when numba imports cleanly and the
environment variable ``ESMALAB_DISABLE_NUMBA`` is unset (or set to ``0``).
The choice is made once, at import time.
"""

import os

_FLAG = os.environ.get("ESMALAB_DISABLE_NUMBA", "").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG in ("", "0", "false", "no")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator.

    The compiled kernel is always built if numba exists, so tests can compare
    both paths regardless of ``USE_NUMBA``.
    """
    if HAVE_NUMBA:
        from numba import njit as _njit

        return _njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
