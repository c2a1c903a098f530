"""Kernel backend selection.

Set ``PATCHFREE_NO_NUMBA=1`` in the environment before import to force the
pure-numpy kernels. When numba is missing the numpy path is used as well.
"""
import os

_FLAG = os.environ.get("PATCHFREE_NO_NUMBA", "").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")
BACKEND = "numba" if USE_NUMBA else "numpy"
