"""Deterministic seed derivation.

Every random stream in the package is derived from a master seed plus a
fixed integer path, mixed through ``numpy.random.SeedSequence``:

    SeedSequence([master_seed, *path])

The first path component names the purpose (measurement generation,
ensemble initialization, solver noise); later components identify the trial
or particle. Streams are counter-based (Philox), so a stream's output never
depends on how many other streams exist or in which order they are used.
"""

import numpy as np

#: path tags for the stream purposes
MEASUREMENT = 1
INIT = 2
NOISE = 3


def seed_sequence(master_seed, *path):
    """The SeedSequence for ``(master_seed, *path)``."""
    return np.random.SeedSequence([int(master_seed)] + [int(p) for p in path])


def derive_rng(master_seed, *path):
    """A Philox generator for the given seed path."""
    return np.random.Generator(np.random.Philox(seed_sequence(master_seed, *path)))


def particle_streams(master_seed, n, *path):
    """One independent generator per particle index under a common path."""
    return [derive_rng(master_seed, *path, NOISE, i) for i in range(n)]
