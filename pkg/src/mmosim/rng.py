"""Counter-based random streams.

Every stochastic draw in a run comes from a stream keyed by
(run seed, stream name). Draw k of a stream is a pure function of
(key, k), so a stream's full state is one integer counter: snapshots
persist the counter, restores resume mid-sequence bit-exactly, and one
agent's draws are unaffected by population size or scheduling order.
"""

from __future__ import annotations

import hashlib
import math

_FULL = 1 << 64


class RandomStream:
    """Deterministic stream of draws derived from blake2b(key, counter)."""

    __slots__ = ("name", "_key", "counter")

    def __init__(self, seed: int, name: str, counter: int = 0):
        self.name = name
        self._key = hashlib.blake2b(
            f"{seed}:{name}".encode(), digest_size=16
        ).digest()
        self.counter = counter

    def _next64(self) -> int:
        h = hashlib.blake2b(
            self.counter.to_bytes(8, "little"), key=self._key, digest_size=8
        )
        self.counter += 1
        return int.from_bytes(h.digest(), "little")

    def random(self) -> float:
        """Uniform in [0, 1)."""
        return self._next64() / _FULL

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n), rejection-sampled (no modulo bias)."""
        if n <= 0:
            raise ValueError("randrange() arg must be positive")
        limit = _FULL - (_FULL % n)
        while True:
            x = self._next64()
            if x < limit:
                return x % n

    def randint(self, a: int, b: int) -> int:
        """Uniform integer in [a, b] inclusive."""
        return a + self.randrange(b - a + 1)

    def choice(self, seq):
        if not seq:
            raise IndexError("choice from empty sequence")
        return seq[self.randrange(len(seq))]

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """Box-Muller; consumes exactly two draws."""
        u1 = self.random()
        u2 = self.random()
        # Guard log(0); u1 == 0.0 has probability 2**-64.
        if u1 <= 0.0:
            u1 = 1.0 / _FULL
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return mu + sigma * z

    def lognormal_factor(self, sigma: float) -> float:
        """Multiplicative noise exp(sigma*Z - sigma^2/2) with mean 1."""
        return math.exp(self.normal(0.0, sigma) - 0.5 * sigma * sigma)

    def poisson(self, lam: float) -> int:
        """Knuth's algorithm; adequate for the small means used here."""
        if lam <= 0.0:
            return 0
        threshold = math.exp(-lam)
        k = 0
        p = 1.0
        while True:
            p *= self.random()
            if p <= threshold:
                return k
            k += 1

    def state(self) -> int:
        return self.counter

    def __repr__(self) -> str:
        return f"RandomStream({self.name!r}, counter={self.counter})"


class StreamFamily:
    """Lazily materialized named streams under one run seed."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, RandomStream] = {}

    def get(self, name: str) -> RandomStream:
        s = self._streams.get(name)
        if s is None:
            s = RandomStream(self.seed, name)
            self._streams[name] = s
        return s

    def counters(self) -> dict[str, int]:
        """Counters of every touched stream (untouched streams are at 0)."""
        return {n: s.counter for n, s in self._streams.items() if s.counter}

    def restore(self, counters: dict[str, int]) -> None:
        for name, counter in counters.items():
            self._streams[name] = RandomStream(self.seed, name, counter)
