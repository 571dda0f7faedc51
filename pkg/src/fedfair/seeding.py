"""Seed fan-out.

All randomness comes from numpy's PCG64 bit generator. A master seed is
expanded into independent child streams with ``numpy.random.SeedSequence``,
using the master seed as entropy and a tuple of integer tags as the spawn
key. The same (master, tags) pair yields the same stream on every platform.

Tag layout used across the package::

    (STAGE_SLICE, client)            train/val/test shuffling of one client
    (STAGE_INIT,)                    initial model parameters
    (STAGE_SHUFFLE, round, client)   minibatch order of one client in one round
    (STAGE_PERSONALIZE, client)      post-training adaptation batches

Per-round shuffles do not depend on the method, so every method sees the
same batch order for a given client and round.
"""

from __future__ import annotations

import numpy as np

STAGE_SLICE = 1
STAGE_INIT = 2
STAGE_SHUFFLE = 3
STAGE_PERSONALIZE = 4

MASK64 = (1 << 64) - 1


def make_rng(seed: int, *tags: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & MASK64, spawn_key=tuple(int(t) for t in tags))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, *tags: int) -> int:
    """Derive a 64-bit integer seed for a sub-stage."""
    ss = np.random.SeedSequence(entropy=int(seed) & MASK64, spawn_key=tuple(int(t) for t in tags))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
