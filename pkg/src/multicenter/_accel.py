"""Backend switch for the hot kernels.

Set ``MULTICENTER_NUMBA=0`` before import to force the pure-numpy paths.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("MULTICENTER_NUMBA", "1").lower() not in ("0", "false", "no", "off")


def njit(fn):
    """Compile ``fn`` with numba when available, else return it untouched."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend():
    return "numba" if USE_NUMBA else "numpy"
