"""Counter-based uniforms keyed by (seed, frame, pixel, slot).

Every draw is a pure function of its key, so frames and pixels can be
simulated in any order, in parallel, or on a sub-grid and still reproduce the
same photons. The mixer is the SplitMix64 finalizer applied to a chained key.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_TO_UNIT = 2.0 ** -53


def mix64(x) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)


def stream_key(seed, frame, rows, cols) -> np.ndarray:
    """Per-pixel key; rows/cols rather than flat indices so growing the grid keeps old draws."""
    k = mix64(np.asarray(seed, dtype=np.uint64))
    k = mix64(k ^ np.asarray(frame, dtype=np.uint64))
    k = mix64(k ^ np.asarray(rows, dtype=np.uint64))
    return mix64(k ^ (np.asarray(cols, dtype=np.uint64) << np.uint64(32)))


def uniform(key: np.ndarray, slot: int) -> np.ndarray:
    """Uniform doubles in [0, 1) for draw number ``slot`` of each key."""
    bits = mix64(key ^ mix64(np.uint64(slot)))
    return (bits >> _S11).astype(np.float64) * _TO_UNIT
