"""Explicit-state RNG for the event kernels.

xoshiro256** with splitmix64 seeding, state held in a caller-owned
uint64[4] array.  Replicate r of a run with master seed m is seeded from
(m, r), so results are independent of thread scheduling and identical
across --threads settings.
"""

import math

import numpy as np
from numba import njit

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)


@njit(cache=True, inline="always")
def _splitmix_next(s):
    s = s + _GOLDEN
    z = s
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    z = z ^ (z >> U64(31))
    return s, z


@njit(cache=True)
def seed_state(state, master_seed, stream):
    """Fill a uint64[4] state from (master_seed, stream index)."""
    s = U64(master_seed) ^ (U64(stream) * U64(0xD2B74407B1CE6E93) + U64(1))
    for i in range(4):
        s, z = _splitmix_next(s)
        state[i] = z
    # xoshiro must not start from the all-zero state
    if state[0] | state[1] | state[2] | state[3] == U64(0):
        state[0] = _GOLDEN


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << U64(k)) | (x >> U64(64 - k))


@njit(cache=True, inline="always")
def next_u64(state):
    result = _rotl(state[1] * U64(5), 7) * U64(9)
    t = state[1] << U64(17)
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = _rotl(state[3], 45)
    return result


@njit(cache=True, inline="always")
def uniform(state):
    """Uniform double in the open interval (0, 1)."""
    return (np.float64(next_u64(state) >> U64(11)) + 0.5) * 1.1102230246251565e-16


@njit(cache=True, inline="always")
def exponential(state):
    return -math.log(uniform(state))


@njit(cache=True, inline="always")
def normal(state):
    """Standard normal via Box-Muller (one value per call, no spare cached)."""
    u1 = uniform(state)
    u2 = uniform(state)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(6.283185307179586 * u2)
