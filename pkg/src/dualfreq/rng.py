"""Seeded random streams.

All randomness flows from a single integer seed. Each purpose (weight
init, shuffling, dropout, augmentation, synthetic data) gets its own
independent stream derived with :class:`numpy.random.SeedSequence` using
a fixed spawn key, so toggling one consumer never perturbs another.

The bit generator is PCG64, whose output is specified and identical on
every platform numpy supports.
"""

import numpy as np

PURPOSES = ("init", "shuffle", "dropout", "augment", "synth", "gradcheck")


def stream(seed, purpose):
    """Return a ``numpy.random.Generator`` for ``purpose`` derived from ``seed``."""
    if purpose not in PURPOSES:
        raise ValueError(f"unknown rng purpose {purpose!r}; expected one of {PURPOSES}")
    key = (PURPOSES.index(purpose),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def streams(seed):
    """Dictionary of every named stream for ``seed``."""
    return {p: stream(seed, p) for p in PURPOSES}
