"""Portable 64-bit PRNG for shuffling.

SplitMix64 is used wherever sample order must be identical across
platforms and runs: it is a handful of integer operations with no
floating point, so the streams are exactly reproducible everywhere.
"""

from __future__ import annotations

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    """SplitMix64: a counter mixed through two xor-multiply rounds."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, bound: int) -> int:
        # plain modulo draw; bias is irrelevant at these bounds and the
        # result is identical on every platform
        return self.next_u64() % bound

    def shuffle_indices(self, n: int) -> list[int]:
        """Fisher-Yates permutation of range(n), fully determined by the seed."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.next_below(i + 1)
            order[i], order[j] = order[j], order[i]
        return order


def epoch_stream_seed(seed: int, epoch: int) -> int:
    """Combined seed so every (seed, epoch) pair opens a distinct stream."""
    return (seed + (epoch + 1) * _GOLDEN) & _MASK64
