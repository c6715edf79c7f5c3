"""xoshiro256** generator usable from jitted code.

State is a ``uint64[4]`` array seeded through splitmix64. ``split`` derives an
independent child stream with the generator's 2**128 jump.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NAME = "xoshiro256** (splitmix64 seeding)"

_U = np.uint64
_MASK = (1 << 64) - 1
_JUMP = (0x180EC6D33CFD0ABA, 0xD5A61266F0C9392C, 0xA9582618E03FC9AA, 0x39ABDC4529B1661C)


def _splitmix(x: int):
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def seed_state(seed: int) -> np.ndarray:
    x = int(seed) & _MASK
    out = []
    for _ in range(4):
        x, z = _splitmix(x)
        out.append(z)
    return np.array(out, dtype=np.uint64)


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << _U(k)) | (x >> _U(64 - k))


@njit(cache=True, inline="always")
def next_u64(s):
    result = _rotl(s[1] * _U(5), 7) * _U(9)
    t = s[1] << _U(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, inline="always")
def uniform(s):
    """Float in [0, 1) with 53 random bits."""
    return np.float64(next_u64(s) >> _U(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, inline="always")
def bounded(s, bound, shift):
    """Uniform integer in [0, bound) by masked rejection.

    ``shift`` is ``64 - bit_length(bound - 1)``, precomputed by the caller.
    """
    sh = _U(shift)
    b = _U(bound)
    while True:
        r = next_u64(s) >> sh
        if r < b:
            return np.int64(r)


def shift_for(bound: int) -> int:
    return 64 - max(1, int(bound - 1).bit_length())


@njit(cache=True)
def _jump(s, jump):
    s0 = _U(0)
    s1 = _U(0)
    s2 = _U(0)
    s3 = _U(0)
    for k in range(4):
        for b in range(64):
            if (jump[k] >> _U(b)) & _U(1):
                s0 ^= s[0]
                s1 ^= s[1]
                s2 ^= s[2]
                s3 ^= s[3]
            next_u64(s)
    s[0] = s0
    s[1] = s1
    s[2] = s2
    s[3] = s3


def split(state: np.ndarray) -> np.ndarray:
    """Return a child stream; ``state`` itself jumps ahead by 2**128 draws."""
    child = state.copy()
    _jump(state, np.array(_JUMP, dtype=np.uint64))
    return child


@njit(cache=True)
def fill_uniform(s, out):
    for k in range(out.shape[0]):
        out[k] = uniform(s)


@njit(cache=True)
def fill_bounded(s, bound, out):
    sh = 64
    x = bound - 1
    while x > 0:
        x >>= 1
        sh -= 1
    if sh == 64:
        sh = 63
    for k in range(out.shape[0]):
        out[k] = bounded(s, bound, sh)


class Rng:
    """Small Python wrapper around a xoshiro256** state."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.state = seed_state(seed)

    def random(self, size: int) -> np.ndarray:
        out = np.empty(size, np.float64)
        fill_uniform(self.state, out)
        return out

    def integers(self, bound: int, size: int) -> np.ndarray:
        out = np.empty(size, np.int64)
        fill_bounded(self.state, int(bound), out)
        return out
