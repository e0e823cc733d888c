"""Counter-based random draws keyed by event identity.

Engagement and fault outcomes are drawn from a hash of (seed, keys) rather
than from a sequential stream, so an outcome depends only on *which* event
is being decided and never on the order in which the scheduler reached it.
That keeps single-arm and dual-arm runs of the same seed comparable.
"""
from __future__ import annotations

import hashlib
import struct

_SCALE = 1.0 / 2**64


def trial_seed(seed: int, trial_index: int) -> int:
    return (seed ^ trial_index) & 0xFFFFFFFFFFFFFFFF


class KeyedRng:
    def __init__(self, seed: int, *namespace):
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        self._prefix = struct.pack("<Q", self.seed) + repr(namespace).encode()

    def uniform(self, *keys) -> float:
        """Uniform draw in [0, 1) determined entirely by the seed and ``keys``."""
        digest = hashlib.blake2b(
            self._prefix + repr(keys).encode(), digest_size=8
        ).digest()
        return struct.unpack("<Q", digest)[0] * _SCALE

    def bernoulli(self, p: float, *keys) -> bool:
        if p >= 1.0:
            return True
        if p <= 0.0:
            return False
        return self.uniform(*keys) < p
