"""Seeded random streams.

Every stochastic routine takes one integer seed plus a small integer key
(column index, feature pair, resample number, ...).  Streams come from a
counter-based Philox generator keyed through ``SeedSequence.spawn_key``, so
the stream for a given key does not depend on how many other streams were
drawn before it or on which thread draws it.
"""

from __future__ import annotations

import numpy as np

# stream tags used as the first element of a spawn key
TAG_MCAR = 1
TAG_MNAR = 2
TAG_SECOND_MOMENT = 3
TAG_CROSS_MOMENT = 4
TAG_MEAN = 5
TAG_COV_SET = 6
TAG_MC = 7
TAG_EM = 8
TAG_IMPUTE = 9
TAG_INIT = 10


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, *key)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
