"""Optional numba acceleration with a plain-Python/numpy fallback.

Hot loops in this package are written once as ordinary functions and
compiled with ``numba.njit`` when available.  Set the environment variable
``QDCASCADE_DISABLE_NUMBA=1`` (before import) to force the uncompiled
fallback path; the fallback produces the same results, only slower.
"""

import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False


def _env_disabled() -> bool:
    return os.environ.get("QDCASCADE_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")


#: True when kernels are compiled, False on the fallback path.
NUMBA_ENABLED = HAS_NUMBA and not _env_disabled()


def try_jit(func=None, **kwargs):
    """Apply ``numba.njit`` when acceleration is enabled, else return as-is.

    Usable bare (``@try_jit``) or with njit options (``@try_jit(cache=True)``).
    """

    def wrap(f):
        if NUMBA_ENABLED:
            return numba.njit(**kwargs)(f)
        return f

    if func is not None:
        return wrap(func)
    return wrap
