"""Portable deterministic random source: splitmix64-seeded xoshiro256**.

Every stochastic stage (traffic generation, attack placement, weight
initialization, batch sampling) draws from its own named stream so that a
single 64-bit run seed reproduces the exact artifact bytes on any platform
and any library version. Streams are derived with ``derive_seed``, which
hashes the parent seed together with a label path.

The generator is the reference xoshiro256** algorithm, seeded by walking
splitmix64 from the 64-bit seed. Uniform doubles take the top 53 bits of
the raw output; normals come from the Box-Muller transform.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once. Returns (output, next_state)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64, state


def derive_seed(seed: int, *tokens: str) -> int:
    """Derive a child seed for the stream named by ``tokens``.

    Uses SHA-256 over the parent seed and the label path, so unrelated
    streams never overlap and the derivation is stable across releases.
    """
    label = "/".join(tokens)
    digest = hashlib.sha256(
        b"canids.rng.v1|" + (seed & _MASK64).to_bytes(8, "little") + b"|" + label.encode("utf-8")
    ).digest()
    return int.from_bytes(digest[:8], "little")


class Xoshiro256StarStar:
    """Scalar xoshiro256** stream with float/normal helpers."""

    __slots__ = ("_s0", "_s1", "_s2", "_s3", "_spare_normal")

    def __init__(self, seed: int):
        sm = seed & _MASK64
        s = []
        for _ in range(4):
            out, sm = splitmix64(sm)
            s.append(out)
        if not any(s):
            s[0] = 1  # all-zero state is the one invalid xoshiro state
        self._s0, self._s1, self._s2, self._s3 = s
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        x = (s1 * 5) & _MASK64
        result = (((x << 7) | (x >> 57)) & _MASK64) * 9 & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniforms(self, n: int) -> np.ndarray:
        out = np.empty(n)
        for k in range(n):
            out[k] = (self.next_u64() >> 11) * 2.0**-53
        return out

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n). Modulo-free scaling; bias < n * 2**-53."""
        return int(self.uniform() * n)

    def normal(self) -> float:
        """Standard normal via Box-Muller, one spare cached per pair."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53  # (0, 1], keeps log finite
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = r * math.sin(theta)
        return r * math.cos(theta)

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n)
        for k in range(n):
            out[k] = self.normal()
        return out

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for k in range(len(items) - 1, 0, -1):
            j = self.integer(k + 1)
            items[k], items[j] = items[j], items[k]
