"""Seeded random streams.

All randomness comes from numpy's PCG64 bit generator. Independent streams
are keyed by a tuple of non-negative integers (global seed, purpose, epoch,
clip index, ...) through :class:`numpy.random.SeedSequence`, so a stream can
be recreated from its key alone; resuming training never needs saved RNG
state.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "PCG64"

# purpose tags for derived streams
INIT, SHUFFLE, MASK, AUGMENT, SAMPLE, SPLIT, SYNTH = range(7)


def make_rng(seed: int, *key: int) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *key])))
