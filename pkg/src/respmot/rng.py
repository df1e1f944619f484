"""SplitMix64 random streams.

The generator is the standard SplitMix64: the state advances by the golden
gamma ``0x9E3779B97F4A7C15`` and each output is the state passed through the
finalizer

    z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27; z *= 0x94D049BB133111EB
    z ^= z >> 31

(all arithmetic mod 2**64). Because output ``i`` depends only on
``state + (i + 1) * gamma`` a whole block is produced with vectorised numpy.

Derived quantities:

* uniform in [0, 1): ``(x >> 11) * 2**-53``
* uniform in (0, 1): ``((x >> 11) + 0.5) * 2**-53``
* standard normals in pairs by Box-Muller: consecutive outputs ``u1``
  (open interval) and ``u2`` ([0, 1)) give ``R cos(2 pi u2)`` then
  ``R sin(2 pi u2)`` with ``R = sqrt(-2 ln u1)``; an odd count drops the
  final sine.

Independent streams are keyed by ``(seed, frame, tag)`` through
:func:`stream_seed` so frames can be generated in any order.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def mix64_int(value: int) -> int:
    return int(mix64(np.array([value & _MASK], dtype=np.uint64))[0])


def stream_seed(seed: int, frame: int, tag: int) -> int:
    """Seed of the stream for ``(seed, frame, tag)``."""
    return mix64_int(mix64_int(seed) ^ ((frame & 0xFFFFFFFF) << 8 | (tag & 0xFF)))


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            counters = np.uint64(self.state) + steps * np.uint64(GAMMA)
        self.state = (self.state + n * GAMMA) & _MASK
        return mix64(counters)

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform_open(self, n: int) -> np.ndarray:
        return ((self.next_u64(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        raw = (self.next_u64(2 * pairs) >> np.uint64(11)).astype(np.float64)
        radius = np.sqrt(-2.0 * np.log((raw[0::2] + 0.5) * 2.0**-53))
        theta = (2.0 * np.pi * 2.0**-53) * raw[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(theta)
        out[1::2] = radius * np.sin(theta)
        return out[:n]

    def poisson(self, lam: float) -> int:
        """Knuth's multiplication method; fine for the small rates used here."""
        if lam <= 0:
            return 0
        limit = np.exp(-lam)
        k = 0
        prod = self.uniform_open(1)[0]
        while prod > limit:
            k += 1
            prod *= self.uniform_open(1)[0]
        return k


def frame_stream(seed: int, frame: int, tag: int) -> SplitMix64:
    return SplitMix64(stream_seed(seed, frame, tag))
