"""Counter-based Gaussian noise keyed by (seed, realization, stream, neuron, step).

Uses the Threefry-2x32 block cipher with 20 rounds.  A draw is a pure function
of its coordinates, so any subset of the noise can be regenerated in any order:
parallel schedules cannot change results, and the mean-field companion of a
neuron can replay exactly the Brownian increments that drove it.

Normals come in pairs from one cipher call through Box-Muller; neurons
``2p`` and ``2p + 1`` share pair ``p``.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

NOISE_STREAM = 0
INIT_STREAM = 1

_M32 = 0xFFFFFFFF
_TWO_PI = 6.283185307179586
_INV_2_32 = 2.3283064365386963e-10


@nb.njit(inline="always", cache=True)
def _rotl(x, r):
    return ((x << np.uint64(r)) | (x >> np.uint64(32 - r))) & np.uint64(0xFFFFFFFF)


@nb.njit(inline="always", cache=True)
def _four_rounds(x0, x1, r0, r1, r2, r3):
    m = np.uint64(0xFFFFFFFF)
    x0 = (x0 + x1) & m
    x1 = _rotl(x1, r0) ^ x0
    x0 = (x0 + x1) & m
    x1 = _rotl(x1, r1) ^ x0
    x0 = (x0 + x1) & m
    x1 = _rotl(x1, r2) ^ x0
    x0 = (x0 + x1) & m
    x1 = _rotl(x1, r3) ^ x0
    return x0, x1


@nb.njit(inline="always", cache=True)
def threefry2x32(k0, k1, c0, c1):
    """Threefry-2x32-20 block: two 32-bit key words, two counter words.

    Words are carried in uint64 and masked to 32 bits.
    """
    m = np.uint64(0xFFFFFFFF)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    k2 = np.uint64(0x1BD11BDA) ^ k0 ^ k1
    x0 = (np.uint64(c0) + k0) & m
    x1 = (np.uint64(c1) + k1) & m
    x0, x1 = _four_rounds(x0, x1, 13, 15, 26, 6)
    x0 = (x0 + k1) & m
    x1 = (x1 + k2 + np.uint64(1)) & m
    x0, x1 = _four_rounds(x0, x1, 17, 29, 16, 24)
    x0 = (x0 + k2) & m
    x1 = (x1 + k0 + np.uint64(2)) & m
    x0, x1 = _four_rounds(x0, x1, 13, 15, 26, 6)
    x0 = (x0 + k0) & m
    x1 = (x1 + k1 + np.uint64(3)) & m
    x0, x1 = _four_rounds(x0, x1, 17, 29, 16, 24)
    x0 = (x0 + k1) & m
    x1 = (x1 + k2 + np.uint64(4)) & m
    x0, x1 = _four_rounds(x0, x1, 13, 15, 26, 6)
    x0 = (x0 + k2) & m
    x1 = (x1 + k0 + np.uint64(5)) & m
    return x0, x1


@nb.njit(inline="always", cache=True)
def gaussian_pair(k0, k1, pair, step):
    """Two independent standard normals for counter ``(pair, step)``.

    Uniforms sit at bin centres ``(a + 0.5) / 2^32`` so ``log`` never sees 0.
    The sine is recovered from the cosine to save a libm call.
    """
    a, b = threefry2x32(k0, k1, pair, step)
    u1 = (np.int64(a) + 0.5) * 2.3283064365386963e-10
    u2 = (np.int64(b) + 0.5) * 2.3283064365386963e-10
    rad = math.sqrt(-2.0 * math.log(u1))
    c = math.cos(6.283185307179586 * u2)
    s = math.sqrt(max(0.0, 1.0 - c * c))
    if u2 > 0.5:
        s = -s
    return rad * c, rad * s


@nb.njit(cache=True)
def fill_normals(out, k0, k1, step):
    """Write the normals of all neurons for one step into ``out``."""
    n = out.shape[0]
    for p in range(n // 2):
        z0, z1 = gaussian_pair(k0, k1, p, step)
        out[2 * p] = z0
        out[2 * p + 1] = z1
    if n % 2:
        z0, _ = gaussian_pair(k0, k1, n // 2, step)
        out[n - 1] = z0


def _words(x: int) -> tuple[int, int]:
    return x & _M32, (x >> 32) & _M32


def stream_key(seed: int, realization: int, stream: int = NOISE_STREAM) -> tuple[int, int]:
    """Derive the 64-bit key of one (realization, stream) from a 64-bit seed.

    The seed is the cipher key and ``(realization, stream)`` the counter, so
    distinct realizations get unrelated keys.
    """
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    if not 0 <= realization < 2**32:
        raise ValueError("realization index must fit in 32 bits")
    k0, k1 = _words(seed)
    a, b = threefry2x32(k0, k1, realization, stream)
    return int(a), int(b)


def stream_keys(seed: int, n_realizations: int, stream: int = NOISE_STREAM) -> np.ndarray:
    """Keys for realizations ``0..n-1`` as an ``(n, 2)`` uint64 array."""
    return np.array([stream_key(seed, r, stream) for r in range(n_realizations)], dtype=np.uint64).reshape(-1, 2)


def normal_block(seed: int, realization: int, step: int, n: int, stream: int = NOISE_STREAM) -> np.ndarray:
    """Standard normals of ``n`` neurons at one step of one realization."""
    k0, k1 = stream_key(seed, realization, stream)
    out = np.empty(n)
    fill_normals(out, np.uint64(k0), np.uint64(k1), step)
    return out
