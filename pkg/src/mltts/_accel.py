"""Backend selection for the compiled kernels.

``MLTTS_BACKEND=numba`` (default) dispatches hot loops to numba-compiled
kernels; ``MLTTS_BACKEND=numpy`` uses the vectorized numpy paths. When numba
is not importable the numpy path is used regardless.
"""

from __future__ import annotations

import os

BACKEND_ENV = "MLTTS_BACKEND"
BACKENDS = ("numba", "numpy")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False


def njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def resolve_backend(name: str | None = None) -> str:
    name = (name or os.environ.get(BACKEND_ENV) or "numba").lower()
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name
