"""Counter-style random streams.

Every draw is addressed by a tuple of non-negative integers (seed, domain,
index, ...) hashed through ``SeedSequence`` into a Philox generator, so a
stream never depends on how many numbers other streams consumed.
"""

from __future__ import annotations

import numpy as np

# sampler roles
INIT = 0
KNOWN = 1
GUIDED = 2

# other domains, kept disjoint from the sampler roles
TRAIN = 10
PHANTOM = 11
SITE = 12
SPLIT = 13


def stream(*key: int) -> np.random.Generator:
    words = [int(k) & 0xFFFFFFFFFFFFFFFF for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def normal(shape, *key: int) -> np.ndarray:
    """Unit Gaussian array (float32) for the stream ``key``."""
    return stream(*key).standard_normal(shape).astype(np.float32)
