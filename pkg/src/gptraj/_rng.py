"""Seed-derived random substreams.

Each consumer gets an independent ``numpy.random.Generator`` keyed by
``(seed, purpose, index)`` through ``SeedSequence.spawn_key``. Within a
trajectory stream, step ``k`` always consumes the ``k``-th block of draws,
so a stream can be replayed to any horizon.
"""

import numpy as np

NOISE = 0
FUNCTION = 1
PROXY = 2
POINTS = 3


def substream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(purpose, int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def standard_normals(seed, purpose, count, steps, dim, start=0):
    """``(count, steps, dim)`` standard normals; row ``i`` comes from stream ``i``."""
    out = np.empty((count, steps, dim))
    for i in range(count):
        draws = substream(seed, purpose, i).standard_normal((start + steps) * dim)
        out[i] = draws[start * dim:].reshape(steps, dim)
    return out
