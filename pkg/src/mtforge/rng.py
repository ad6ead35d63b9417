"""Deterministic random number streams.

All stochastic stages draw from PCG64 generators derived through
``numpy.random.SeedSequence``. A substream is addressed by the run seed
plus an integer key path (typically the sentence id), so per-sentence
randomness is reproducible no matter how work is distributed over
workers or in what order sentences are processed.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the (seed, key...) substream; same args, same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))
