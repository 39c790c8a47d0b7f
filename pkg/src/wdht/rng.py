"""Portable counter-based random number generator.

The generator is SplitMix64.  Draw ``i`` (1-based) from a stream with
state ``s`` is ``mix(s + i * 0x9E3779B97F4A7C15 mod 2**64)`` where::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

all arithmetic modulo 2**64.  Derived values:

* uniform in [0, 1): ``(z >> 11) * 2**-53``
* standard normal: Box-Muller on consecutive uniform pairs (u1, u2),
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` then ``... * sin(2 pi u2)``
* permutation of n: stable argsort of n raw 64-bit draws

The integer stream is identical on every platform and in any language
that implements the recurrence above.
"""

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _mix_scalar(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """Stateful SplitMix64 stream; vectorised draws advance the counter."""

    def __init__(self, seed=0):
        self.state = int(seed) & _MASK

    def spawn(self, stream):
        """Independent child generator keyed by an integer stream id."""
        return SplitMix64(_mix_scalar((self.state ^ _mix_scalar(int(stream) + 1)) & _MASK))

    def next_u64(self, n):
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            out = _mix(z)
        self.state = (self.state + n * GAMMA) & _MASK
        return out

    def uniform(self, n):
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def normal(self, n):
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def integers(self, high, n):
        """n integers uniform on [0, high)."""
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)

    def permutation(self, n):
        return np.argsort(self.next_u64(n), kind="stable")
