"""Seeded random streams.

Every random draw in the planner comes from a counter-based Philox generator keyed by a run
seed plus stream identifiers, so that independent draws never share state and blockwise or
per-object generation reproduces the serial result.
"""

import zlib

import numpy as np


def philox(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator keyed by a seed and stream identifiers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *keys])))


def stream_key(label: str) -> int:
    """Stable integer stream identifier for a string label."""
    return zlib.crc32(label.encode("utf-8"))
