"""numba switch.

Hot kernels are written twice: an explicit-loop version compiled with
``numba.njit`` and a plain numpy (or pure Python) version. Setting
``SHA_ASR_PURE_NUMPY=1`` forces the fallback path even when numba is
installed. The flag changes speed only; both paths are tested against each
other.
"""
import os

PURE_NUMPY_FLAG = "SHA_ASR_PURE_NUMPY"

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None

HAVE_NUMBA = numba is not None


def pure_numpy_requested():
    return os.environ.get(PURE_NUMPY_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and not pure_numpy_requested()


def njit(fn):
    """Compile ``fn`` with numba when available, else return it unchanged."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend():
    return "numba" if USE_NUMBA else "numpy"
