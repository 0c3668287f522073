"""Counter-based Gaussian streams keyed by (seed, path index, draw index).

Philox4x32-10 is evaluated directly on numpy arrays, so any normal in any
stream can be produced without touching generator state. This is what lets
a batch of paths and a single path reproduce each other bit for bit.
"""

from __future__ import annotations

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_MASK64 = (1 << 64) - 1

_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)
_ROUNDS = 10

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / float(1 << 53)


def philox4x32(counter: np.ndarray, key: np.ndarray) -> np.ndarray:
    """Philox4x32-10 block function.

    Args:
        counter: integer array of shape (..., 4), each word < 2**32.
        key: integer array of shape (..., 2), broadcastable against counter.

    Returns:
        uint32 array of shape (..., 4).
    """
    counter = np.asarray(counter, dtype=np.uint64)
    key = np.asarray(key, dtype=np.uint64)
    c0, c1, c2, c3 = (counter[..., i] for i in range(4))
    k0, k1 = key[..., 0], key[..., 1]
    for r in range(_ROUNDS):
        if r:
            k0 = (k0 + _PHILOX_W0) & _MASK32
            k1 = (k1 + _PHILOX_W1) & _MASK32
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> np.uint64(32)) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> np.uint64(32)) ^ c3 ^ k1,
            p0 & _MASK32,
        )
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def _split64(value) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(value, dtype=np.uint64)
    return v & _MASK32, v >> np.uint64(32)


def seed_key(seed: int) -> np.ndarray:
    """Two 32-bit key words from a 64-bit seed (negative seeds wrap)."""
    s = int(seed) & _MASK64
    return np.array([s & 0xFFFFFFFF, s >> 32], dtype=np.uint64)


def standard_normals(seed: int, stream, index) -> np.ndarray:
    """Standard normal variates N(seed, stream, index).

    ``stream`` (the path index) and ``index`` (the draw index within that
    path) are broadcast against each other. Each Philox block yields two
    53-bit uniforms and hence, via Box-Muller, two normals: even indices take
    the cosine branch, odd indices the sine branch.
    """
    stream = np.asarray(stream, dtype=np.uint64)
    index = np.asarray(index, dtype=np.uint64)
    stream, index = np.broadcast_arrays(stream, index)
    block = index >> np.uint64(1)
    lane = (index & np.uint64(1)).astype(bool)
    b_lo, b_hi = _split64(block)
    s_lo, s_hi = _split64(stream)
    counter = np.stack([b_lo, b_hi, s_lo, s_hi], axis=-1)
    out = philox4x32(counter, seed_key(seed)).astype(np.uint64)
    u1 = ((out[..., 0] >> np.uint64(5)) * np.uint64(1 << 26) + (out[..., 1] >> np.uint64(6))).astype(np.float64)
    u2 = ((out[..., 2] >> np.uint64(5)) * np.uint64(1 << 26) + (out[..., 3] >> np.uint64(6))).astype(np.float64)
    u1 = (u1 + 0.5) * _INV_2_53  # open interval, log(u1) finite
    u2 = u2 * _INV_2_53
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = _TWO_PI * u2
    return np.where(lane, radius * np.sin(angle), radius * np.cos(angle))
