"""RNG stream derivation.

Every random draw in a build comes from a generator keyed on
(global seed, slice id, item index, purpose), so output never depends on
worker scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np

WINDOW = 0
GENES = 1
MASK = 2


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _words(text: str) -> list[int]:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4)]


def derive_rng(seed: int, slice_id: str, index: int, purpose: int = 0) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    entropy = [seed & 0xFFFFFFFF, seed >> 32, *_words(slice_id), index, purpose]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
