"""Counter-keyed random streams.

Every consumer of randomness derives its own generator from the master seed
and a tuple key such as ``(SAMPLING, worker, step)``. Streams never depend on
how many other streams were drawn before them, so changing the worker count or
the execution order leaves each individual sequence untouched.
"""
from __future__ import annotations

import numpy as np

# Stream-role tags. The first element of every key.
DATA = 0
SAMPLING = 1
WORKER_CODEC = 2
SERVER_CODEC = 3
PROBE = 4


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return a fresh generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
