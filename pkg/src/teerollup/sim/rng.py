"""Named random streams.

Every actor draws from its own Philox (counter-based) generator keyed by
SHA-256(seed || stream name), so the draws an actor sees do not depend on how
events from other actors interleave.
"""

from __future__ import annotations

import numpy as np

from ..crypto import hash


class Streams:
    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            key = int.from_bytes(hash(f"teerollup/rng/{self.seed}/{name}".encode())[:16], "big")
            self._streams[name] = np.random.Generator(np.random.Philox(key=key))
        return self._streams[name]

    def seed_bytes(self, name: str) -> bytes:
        """32 bytes of key material for ``name``; stable across runs."""
        return hash(f"teerollup/keyseed/{self.seed}/{name}".encode())
