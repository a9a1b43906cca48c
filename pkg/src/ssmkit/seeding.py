"""Deterministic RNG substreams.

All randomness in the package flows from one root seed. Each consumer asks
for a named substream; the (root, names...) pair fully determines the stream,
so reruns are bitwise reproducible and substreams never collide by accident.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream"]


def _tag_to_u32(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def substream(root_seed: int, *tags) -> np.random.Generator:
    """Generator for the substream named by `tags` under `root_seed`.

    Tags may be strings or ints; they are hashed into the SeedSequence
    spawn key, so the same (seed, tags) always yields the same stream.
    """
    key = tuple(_tag_to_u32(t) for t in tags)
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=key))
