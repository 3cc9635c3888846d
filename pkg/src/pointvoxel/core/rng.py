"""Counter-based deterministic random numbers.

Draw ``i`` of a generator seeded with ``s`` is ``mix64(s + (i + 1) * GOLDEN)``,
where ``mix64`` is the SplitMix64 finalizer (Steele, Lea & Flood 2014). All
arithmetic is modulo 2**64, so streams are bit-identical on every platform
and any draw can be computed without touching the ones before it. That last
property lets compiled kernels evaluate per-(query, point) priorities in
parallel without sharing generator state.

Child generators are derived with ``fork(key)`` as
``seed' = mix64(seed ^ mix64(key + FORK_SALT))``.

Sampling without replacement uses bottom-k priorities: every candidate gets
the key ``mix64(seed' + (id + 1) * GOLDEN)`` for its stable identifier ``id``
and the ``k`` smallest keys win (ties by identifier). Each ``k``-subset is
equally likely, and the result does not depend on the order the candidates
were visited in.
"""

from __future__ import annotations

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
FORK_SALT = np.uint64(0xD1B54A32D192ED03)
_MASK = (1 << 64) - 1


def _mix64_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def priority(seed, ident):
    return mix64(seed + (np.uint64(ident) + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15))


def derive_seed(seed: int, key: int) -> int:
    return _mix64_int((seed & _MASK) ^ _mix64_int(key + int(FORK_SALT)))


def derive_seeds(seed: int, keys) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64_array(np.uint64(seed & _MASK) ^ mix64_array(keys + FORK_SALT))


def priorities(seed: int, idents) -> np.ndarray:
    idents = np.asarray(idents, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64_array(np.uint64(seed & _MASK) + (idents + np.uint64(1)) * GOLDEN)


class SeededRng:
    """Single-owner generator. Fork children instead of sharing one across workers."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, counter={self.counter})"

    def next_u64(self, count: int | None = None):
        n = 1 if count is None else int(count)
        out = priorities(self.seed, np.arange(self.counter, self.counter + n, dtype=np.uint64))
        self.counter += n
        return int(out[0]) if count is None else out

    def random(self, count: int | None = None):
        """Uniform doubles in [0, 1) built from the top 53 bits of each draw."""
        u = self.next_u64(1 if count is None else count)
        f = (u >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return float(f[0]) if count is None else f

    def normal(self, count: int) -> np.ndarray:
        """Standard normals via Box-Muller over pairs of uniform draws."""
        half = (int(count) + 1) // 2
        u1 = 1.0 - self.random(half)  # (0, 1]
        u2 = self.random(half)
        rad = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([rad * np.cos(2 * np.pi * u2), rad * np.sin(2 * np.pi * u2)])
        return z[: int(count)]

    def uniform(self, low, high, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        return (low + (high - low) * self.random(n)).reshape(shape)

    def integers(self, high: int, count: int) -> np.ndarray:
        """Integers in [0, high). Bias is at most high / 2**53."""
        return np.minimum(np.floor(self.random(count) * high).astype(np.int64), high - 1)

    def fork(self, key: int) -> SeededRng:
        return SeededRng(derive_seed(self.seed, int(key)))

    def sample_without_replacement(self, idents, k: int) -> np.ndarray:
        """Uniform k-subset of ``idents`` (non-negative ints), returned in priority order.

        Consumes one counter step so repeated calls on the same generator differ.
        """
        idents = np.asarray(idents, dtype=np.int64)
        sub = derive_seed(self.seed, self.counter)
        self.counter += 1
        return bottom_k(sub, idents, k)


def bottom_k(seed: int, idents, k: int) -> np.ndarray:
    idents = np.asarray(idents, dtype=np.int64)
    if k >= idents.size:
        k = idents.size
    pri = priorities(seed, idents)
    order = np.lexsort((idents, pri))
    return idents[order[:k]]
