"""Counter-based dropout masks and the fused MC-dropout decoder kernels.

The keep bit of unit ``j`` in decoder hidden layer ``l`` for replicate ``r``
of seed ``i`` is a pure function of ``(rng_seed, i, r, l, j)``: a splitmix64
hash chain whose 64-bit outputs each supply two 32-bit uniforms. A unit is
kept when its uniform is below ``floor(keep_rate * 2**32)``.

:func:`mask_bits` is the vectorised numpy form used to build explicit
:class:`~synthgen.nn.DropoutMask` objects; the numba kernels compute the same
bits inline while applying them.
"""

from __future__ import annotations

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
LAYER_STEP = np.uint64(0xD1B54A32D192ED03)
SEED_STEP = np.uint64(0xA0761D6478BD642F)
_LOW = np.uint64(0xFFFFFFFF)
_S30, _S27, _S31, _S32 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(32)
_M1, _M2 = np.uint64(0xBF58476D1CE4E5B9), np.uint64(0x94D049BB133111EB)


def mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def seed_keys(base: int, seed_indices) -> np.ndarray:
    """Per-seed hash keys for a 63-bit ``base`` key."""
    idx = np.asarray(seed_indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(np.uint64(base) + (idx + np.uint64(1)) * SEED_STEP)


def keep_threshold(keep_rate: float) -> np.uint64:
    return np.uint64(min(2 ** 32, int(np.floor(keep_rate * 2 ** 32))))


def mask_bits(key: np.uint64, replicates, layer: int, width: int, threshold: np.uint64) -> np.ndarray:
    """Boolean keep pattern, shape ``(len(replicates), width)``, for one seed's key."""
    r = np.asarray(replicates, dtype=np.uint64)
    with np.errstate(over="ignore"):
        rk = mix64(np.uint64(key) + (r + np.uint64(1)) * GOLDEN)
        lk = mix64(rk + np.uint64(layer + 1) * LAYER_STEP)
        pairs = np.arange(1, (width + 1) // 2 + 1, dtype=np.uint64)
        h = mix64(lk[:, None] + pairs[None, :] * GOLDEN)
    u = np.empty((r.size, 2 * pairs.size), dtype=np.uint64)
    u[:, 0::2] = h & _LOW
    u[:, 1::2] = h >> _S32
    return u[:, :width] < threshold


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _layer_key(key, r, layer):
    rk = _mix(key + np.uint64(r + 1) * np.uint64(0x9E3779B97F4A7C15))
    return _mix(rk + np.uint64(layer + 1) * np.uint64(0xD1B54A32D192ED03))


@njit(cache=True)
def masked_repeat(a, t, keys, threshold, scale, layer, out):
    """``out[i*t + r] = a[i] * scale * keep(i, r)`` for every seed row ``i``."""
    n, width = a.shape
    low = np.uint64(0xFFFFFFFF)
    for i in range(n):
        for r in range(t):
            s = _layer_key(keys[i], r, layer)
            row = i * t + r
            for p in range(width // 2):
                s += np.uint64(0x9E3779B97F4A7C15)
                h = _mix(s)
                j = 2 * p
                out[row, j] = a[i, j] * scale * np.float64((h & low) < threshold)
                out[row, j + 1] = a[i, j + 1] * scale * np.float64((h >> np.uint64(32)) < threshold)
            if width % 2:
                h = _mix(s + np.uint64(0x9E3779B97F4A7C15))
                out[row, width - 1] = a[i, width - 1] * scale * np.float64((h & low) < threshold)


@njit(cache=True)
def relu_mask(pre, t, keys, threshold, scale, layer):
    """In place ``pre = max(pre, 0) * scale * keep``; row ``k`` is replicate ``k % t`` of seed ``k // t``."""
    rows, width = pre.shape
    low = np.uint64(0xFFFFFFFF)
    for row in range(rows):
        i = row // t
        s = _layer_key(keys[i], row - i * t, layer)
        for p in range(width // 2):
            s += np.uint64(0x9E3779B97F4A7C15)
            h = _mix(s)
            j = 2 * p
            pre[row, j] = max(pre[row, j], 0.0) * scale * np.float64((h & low) < threshold)
            pre[row, j + 1] = max(pre[row, j + 1], 0.0) * scale * np.float64((h >> np.uint64(32)) < threshold)
        if width % 2:
            h = _mix(s + np.uint64(0x9E3779B97F4A7C15))
            pre[row, width - 1] = max(pre[row, width - 1], 0.0) * scale * np.float64((h & low) < threshold)
