"""Backend selection for the hot numeric kernels.

Set ``SPINCAL_NUMBA=0`` to force the pure-numpy path. When numba is missing
the numpy path is used regardless of the flag.
"""

import os

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator


def numba_requested() -> bool:
    flag = os.environ.get("SPINCAL_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and numba_requested()

njit = _njit


def thread_cap() -> int:
    """Worker count from ``SPINCAL_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("SPINCAL_THREADS", "0").strip()
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, n)
