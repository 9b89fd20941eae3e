"""Seeded randomness shared by every module.

All randomness in a run flows from one integer seed. Each consumer asks for a
named sub-stream (``"init"``, ``"corrupt"``, ``"batch"``, ``"eval"``,
``"dropout"``, ...) plus optional integer coordinates such as the step
number, so modules stay reproducible independently of one another.

Dropout masks use a counter-based hash instead of a stateful generator: the
compiled kernels and the numpy fallback evaluate the same function of
``(key, counter, component)`` and therefore draw identical masks.
"""
from __future__ import annotations

import zlib

import numpy as np

_GOLDEN32 = np.uint32(0x9E3779B9)
_M1 = np.uint32(0x85EBCA6B)
_M2 = np.uint32(0xC2B2AE35)


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *coords: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, name, *coords)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, stream_id(name)]
    entropy.extend(int(c) & 0xFFFFFFFFFFFFFFFF for c in coords)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def stream_key(seed: int, name: str, *coords: int) -> tuple[int, int]:
    """Two 32-bit words keying the counter hash for one draw site."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, stream_id(name)]
    entropy.extend(int(c) & 0xFFFFFFFFFFFFFFFF for c in coords)
    lo, hi = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(lo), int(hi)


def fmix32(x: np.ndarray) -> np.ndarray:
    """murmur3 32-bit finalizer, elementwise on a uint32 array (wrapping)."""
    x = np.asarray(x, dtype=np.uint32).copy()
    x ^= x >> np.uint32(16)
    x *= _M1
    x ^= x >> np.uint32(13)
    x *= _M2
    x ^= x >> np.uint32(16)
    return x


def dropout_threshold(rate: float) -> int:
    """Hash values strictly below the threshold are dropped."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    return min(int(rate * 4294967296.0 + 0.5), 0xFFFFFFFF)


def keep_mask(key: tuple[int, int], counters: np.ndarray, component: int, rate: float) -> np.ndarray:
    """Boolean keep-mask for the given counters.

    Must stay in sync with ``kge_hash`` in ``kernel_core.h``.
    """
    lo, hi = key
    c = np.asarray(counters).astype(np.uint32)
    x = (c * np.uint32(3) + np.uint32(component)) * _GOLDEN32 + np.uint32(lo)
    x ^= np.uint32(hi)
    return fmix32(x) >= np.uint32(dropout_threshold(rate))
