"""Deterministic random number streams.

Every source of randomness in the library goes through `stream`, which
builds a counter-based Philox generator from a single 64-bit seed plus a
small stream index. No OS entropy is ever consulted, so runs with the
same seed are bit-reproducible.
"""

import numpy as np

# Stream indices, kept in one place so no two subsystems collide.
STREAM_INIT_ROBUST = 0
STREAM_INIT_NONROBUST = 1
STREAM_INIT_HEAD = 2
STREAM_SHUFFLE = 3
STREAM_ATTACK = 4
STREAM_DATA = 5
STREAM_INVERT = 6
STREAM_MIX = 7


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Return an independent generator for (seed, index)."""
    ss = np.random.SeedSequence([np.uint64(seed).item(), index])
    return np.random.Generator(np.random.Philox(ss))
