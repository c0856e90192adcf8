"""Named, independently seeded random streams derived from one run seed."""

from __future__ import annotations

import zlib

import numpy as np

INIT = "init"
DATA = "data"
AUGMENT = "augment"
STIMULATION = "stimulation"


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for stream ``name`` of run ``seed``; extra ints select sub-substreams."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *map(int, extra)])
