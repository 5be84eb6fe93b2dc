"""Named random sub-streams derived from a single master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFF
    return zlib.crc32(str(name).encode("utf-8"))


def stream(seed: int, *names) -> np.random.Generator:
    """Return a generator for the sub-stream ``names`` of ``seed``.

    The same (seed, names) pair always yields the same sequence, and distinct
    names give statistically independent streams, so components can draw
    randomness without coordinating call order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, *names) -> int:
    """Derive a plain integer seed (for things that want an int, e.g. manifests)."""
    return int(stream(seed, *names).integers(0, 2**31 - 1))
