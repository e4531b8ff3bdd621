"""Numba switch.

Set ``ACTIVETRIAL_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag
is read once at import time.
"""
import os

_FALSEY = ("", "0", "false", "no", "off")

DISABLED = os.environ.get("ACTIVETRIAL_DISABLE_NUMBA", "0").strip().lower() not in _FALSEY

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = _numba is not None and not DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    return _numba.njit(*args, **kwargs)
