"""Counter-based random streams keyed by (seed, *path)."""
from __future__ import annotations

import zlib

import numpy as np


def _word(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    return zlib.crc32(str(key).encode())


def substream(seed: int, *path) -> np.random.Generator:
    """Independent generator for ``(seed, *path)``.

    Streams depend only on their key, never on how many other streams were
    drawn before, so scene ``i`` of a batch is the same whatever the order of
    generation.
    """
    ss = np.random.SeedSequence([_word(seed), *(_word(k) for k in path)])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *path) -> int:
    """A 63-bit integer seed derived from ``(seed, *path)``."""
    ss = np.random.SeedSequence([_word(seed), *(_word(k) for k in path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
