"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. Set ``TRANSKGE_BACKEND=numpy`` to force the
fallback (``=cython`` makes a missing extension an error).
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_requested = os.environ.get("TRANSKGE_BACKEND", "auto").lower()
_compiled = None
if _requested != "numpy":
    try:
        from . import _kernels as _compiled
    except ImportError:
        if _requested == "cython":
            raise
        _compiled = None

BACKENDS = {"numpy": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

active = _compiled if _compiled is not None else _kernels_py
BACKEND = active.BACKEND


def get(name: str | None = None):
    if name is None:
        return active
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None


def as_index(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


def as_flags(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.uint8)
