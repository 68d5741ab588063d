"""Deterministic named RNG substreams.

One episode seed is split into independent substreams by stable string
keys so module reordering cannot change any draw sequence.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream_seed(seed: int, *keys) -> int:
    material = repr((int(seed),) + tuple(str(k) for k in keys)).encode()
    digest = hashlib.sha256(material).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(substream_seed(seed, *keys)))
