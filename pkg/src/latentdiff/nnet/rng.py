"""Seeded random streams.

All randomness in the package flows from one master seed through named
substreams, so every stage (and every per-bin generation loop) draws from
an independent, reproducible generator.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _stream_entropy(stream: str) -> int:
    digest = hashlib.blake2s(stream.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class RngKey:
    """A (seed, stream) pair. Identical keys yield identical draw sequences."""

    seed: int
    stream: str = "root"

    def generator(self) -> np.random.Generator:
        return np.random.default_rng([self.seed & _MASK64, _stream_entropy(self.stream)])

    def child(self, name: str) -> "RngKey":
        return RngKey(self.seed, f"{self.stream}/{name}")


def make_rng(seed: int, stream: str = "root") -> np.random.Generator:
    """Generator for a named substream of `seed`."""
    return RngKey(seed, stream).generator()
