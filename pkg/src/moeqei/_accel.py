"""Numba switch.

Hot kernels are compiled with numba when it is importable and the
``MOEQEI_DISABLE_NUMBA`` environment variable is unset (or ``0``).
Otherwise every kernel dispatches to its pure-numpy twin.
"""

import os

_flag = os.environ.get("MOEQEI_DISABLE_NUMBA", "").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError("numba disabled by MOEQEI_DISABLE_NUMBA")
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator


def use_numba() -> bool:
    return NUMBA_AVAILABLE
