"""Counter-based SplitMix64 streams.

Every random draw in the package comes from a :class:`Stream`. A stream is
plain SplitMix64 started from a key, and keys are derived from a root seed
plus an integer path (for example ``derive(seed, TAG_QIM, j, h)``), so
independent substreams never share state and can be regenerated in any
order.

Output ``i`` (0-based) of a stream with key ``s`` is
``mix(s + (i + 1) * GAMMA mod 2**64)``, which is what the sequential
SplitMix64 recurrence produces.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# domain tags for derive(); stable, part of the on-disk contract
TAG_SPREAD = 1
TAG_QIM = 2
TAG_INIT = 3
TAG_SHUFFLE = 4
TAG_ATTACK = 5
TAG_DATA = 6


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive(seed: int, *path: int) -> int:
    """Key for the substream of ``seed`` addressed by ``path``."""
    key = mix64(int(seed) + GAMMA)
    for p in path:
        if p < 0:
            raise ValueError("path components must be non-negative")
        key = mix64(key ^ mix64(int(p) * GAMMA + 1))
    return key


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class Stream:
    """SplitMix64 generator keyed by a 64-bit integer."""

    def __init__(self, key: int):
        self.key = int(key) & MASK64
        self.counter = 0

    def u64(self, k: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + k, dtype=np.uint64)
        self.counter += k
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + idx * np.uint64(GAMMA)
            return _mix_array(z)

    def uniform(self, k: int) -> np.ndarray:
        """``k`` doubles in [0, 1) with 53 random bits each."""
        return (self.u64(k) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, k: int) -> np.ndarray:
        """``k`` standard normals via Box-Muller (pairs consumed in order)."""
        pairs = (k + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:k]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for t, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[t] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm
