"""Numba switch for the hot loops.

Set ``EVCI_SOC_DISABLE_NUMBA=1`` to force the pure numpy/Python paths, e.g.
when numba is not installed or to cross-check the compiled kernels.
"""
import os

DISABLED_BY_ENV = os.environ.get("EVCI_SOC_DISABLE_NUMBA", "").strip().lower() in {
    "1", "true", "yes", "on",
}

try:
    if DISABLED_BY_ENV:
        raise ImportError
    from numba import njit as _njit
    USE_NUMBA = True
except ImportError:
    _njit = None
    USE_NUMBA = False


def maybe_njit(func):
    """Compile ``func`` with numba when enabled, otherwise return it unchanged.

    The plain Python body is always reachable as ``.py_func``.
    """
    if USE_NUMBA:
        return _njit(cache=True)(func)
    func.py_func = func
    return func
