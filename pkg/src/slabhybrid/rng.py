"""Splittable counter-style random streams for reproducible particle histories.

Each history gets an independent stream derived purely from
``(run seed, history index)``, so results do not depend on how histories are
scheduled across workers.  The generator is the SplitMix64 sequence (additive
counter plus a 64-bit finalizer); per-history initial states are scattered by
the same finalizer, which makes inter-stream overlap a birthday-bound event
(~2^-64 per variate pair) rather than a structural one.

The compiled Monte Carlo kernels in :mod:`slabhybrid.kernels` implement the
identical arithmetic on ``uint64``; the test suite pins bit-for-bit agreement
between the two implementations.
"""

from __future__ import annotations

__all__ = ["MASK64", "GAMMA", "mix64", "stream_init", "unit_open", "RandomStream"]

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer (Stafford mix 13 variant)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def stream_init(seed: int, history: int) -> int:
    """Initial stream state for a given (seed, history index) pair."""
    return mix64((seed + GAMMA * (history + 1)) & MASK64)


def unit_open(z: int) -> float:
    """Map a 64-bit word to a double in the open interval (0, 1).

    Uses the top 52 bits plus a half-ulp offset, so 0.0 and 1.0 are
    unreachable and logarithms of the result are always finite.
    """
    return (float(z >> 12) + 0.5) * 2.0**-52


class RandomStream:
    """Per-history random stream; state advances by a fixed 64-bit increment."""

    __slots__ = ("state",)

    def __init__(self, seed: int, history: int):
        self.state = stream_init(seed, history)

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        """Next variate, uniform on the open interval (0, 1)."""
        return unit_open(self.next_u64())
