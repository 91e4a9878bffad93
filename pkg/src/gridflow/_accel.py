"""Optional numba acceleration.

Hot kernels are written once and compiled with ``numba.njit`` when numba is
importable and ``GRIDFLOW_DISABLE_NUMBA`` is unset (or "0"). Otherwise the
pure-numpy implementations registered next to them are used.
"""

from __future__ import annotations

import os

_FLAG = "GRIDFLOW_DISABLE_NUMBA"


def numba_requested() -> bool:
    return os.environ.get(_FLAG, "0").strip().lower() in ("", "0", "false", "no")


try:
    if not numba_requested():
        raise ImportError("disabled via " + _FLAG)
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit_opts() -> dict:
    return dict(cache=True, nogil=True, fastmath=False, error_model="numpy")


def maybe_njit(func):
    """Compile ``func`` with numba when available; return it unchanged otherwise."""
    if HAVE_NUMBA:
        return _njit(**njit_opts())(func)
    return func
