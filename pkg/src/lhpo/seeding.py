"""Deterministic named random streams.

Every stochastic decision in the library draws from a generator addressed by
``(root seed, *labels)``. Streams are independent of draw order and of how
work is scheduled, so adding or removing parallelism never changes results.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def seed_sequence(root: int, *labels: object) -> np.random.SeedSequence:
    """SeedSequence for the stream addressed by ``(root, *labels)``."""
    words = [int(root) & _MASK64]
    for label in labels:
        digest = hashlib.sha256(str(label).encode("utf-8")).digest()
        words.extend(int.from_bytes(digest[i : i + 8], "little") for i in (0, 8))
    return np.random.SeedSequence(words)


def stream(root: int, *labels: object) -> np.random.Generator:
    """PCG64 generator for the named stream."""
    return np.random.default_rng(seed_sequence(root, *labels))


def child_seed(root: int, *labels: object) -> int:
    """Derived integer seed for components that are configured by plain ints."""
    return int(seed_sequence(root, *labels).generate_state(1, np.uint64)[0] >> 1)
