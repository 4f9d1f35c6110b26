"""Deterministic counter-based random number generation.

Every stochastic choice in the library (weight init, batch sampling,
Bernoulli mask draws) flows through :class:`CounterRng`, a SplitMix64
counter stream. The generator is pure 64-bit integer arithmetic, so the
same seed produces the same byte-for-byte stream on every platform and
every numpy version. The mixing function is:

    z = seed + GOLDEN * (counter + i)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out_i = z ^ (z >> 31)

Uniform doubles take the top 53 bits of ``out_i``; normals come from a
Box-Muller transform of consecutive uniform pairs. Because the stream is
a function of (seed, counter) only, draws can be vectorised and streams
can be forked with :meth:`derive` without correlation.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_DOUBLE_SCALE = 1.0 / float(1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class CounterRng:
    """SplitMix64 stream addressed by a monotonically increasing counter."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.counter = int(counter)

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(self.seed + _GOLDEN * (idx + np.uint64(1)))

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform floats in [0, 1), float64 mantissa precision."""
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _DOUBLE_SCALE
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None, std: float = 1.0) -> np.ndarray | float:
        """Standard normals via Box-Muller on consecutive uniform pairs."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = (self._raw(2 * pairs) >> np.uint64(11)).astype(np.float64) * _DOUBLE_SCALE
        u1 = u[:pairs]
        u2 = u[pairs:]
        r = np.sqrt(-2.0 * np.log(1.0 - u1))  # 1-u1 in (0,1], log never sees 0
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n] * std
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray | int:
        """Uniform integers in [low, high)."""
        span = high - low
        if span <= 0:
            raise ValueError(f"empty integer range [{low}, {high})")
        n = 1 if size is None else int(np.prod(size))
        v = low + (self._raw(n) % np.uint64(span)).astype(np.int64)
        if size is None:
            return int(v[0])
        return v.reshape(size)

    def bernoulli(self, p: np.ndarray) -> np.ndarray:
        """Independent {0,1} draws, element i is 1 with probability p[i]."""
        p = np.asarray(p)
        u = self.uniform(p.shape)
        return (u < p).astype(np.float32)

    def derive(self, *tags: int) -> "CounterRng":
        """Fork an independent stream keyed by integer tags."""
        s = self.seed
        with np.errstate(over="ignore"):
            for t in tags:
                s = _mix(s + _GOLDEN * np.uint64(t & 0xFFFFFFFFFFFFFFFF))
        return CounterRng(int(s))

    def __repr__(self) -> str:
        return f"CounterRng(seed={int(self.seed)}, counter={self.counter})"


def seeded_rng(seed: int) -> CounterRng:
    """Entry point for a reproducible stream from a 64-bit seed."""
    return CounterRng(seed)
