"""Deterministic random-stream management.

Every stochastic routine takes an explicit numpy Generator. Streams are
derived from a 64-bit master seed plus a small integer stream index, so
each component (token sampling, channel, measurement, attack, ...) draws
from its own reproducible sequence and can be replayed in isolation.
"""

from __future__ import annotations

import numpy as np

# Fixed stream indices used by the run harness.
STREAM_TOKEN = 0
STREAM_CHANNEL = 1
STREAM_MEASURE = 2
STREAM_KEYGEN = 3
STREAM_ATTACK = 4


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for (seed, stream); distinct stream indices are independent."""
    return np.random.default_rng([np.uint64(seed & (2**64 - 1)), np.uint64(stream)])


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """n independent child generators (safe for parallel position blocks)."""
    return rng.spawn(n)
