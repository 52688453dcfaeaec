"""Named random streams derived from one integer seed."""

import zlib

import numpy as np


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for subsystem ``name``; stable across runs and platforms."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))
