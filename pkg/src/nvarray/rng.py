"""Seed derivation.

Every stochastic stage derives its randomness from the single root seed plus a
stage tag and an item index (ion, aperture, spot). Items therefore own
independent streams and results do not depend on how work is scheduled.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# stage tags
MASK = 1
MASKED_ENTRIES = 2
TRANSPORT = 3
FORMATION = 4
IMAGING = 5
PHOTONICS = 6

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def seed_sequence(seed: int, stage: int, *index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(stage, *index))


def generator(seed: int, stage: int, *index: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, stage, *index))


def stream_keys(seed: int, stage: int, n: int) -> np.ndarray:
    """``n`` independent 64-bit stream keys for items 0..n-1 of a stage."""
    if n == 0:
        return np.zeros(0, dtype=np.uint64)
    return seed_sequence(seed, stage).generate_state(n, dtype=np.uint64)


@njit(cache=True)
def next_uniform(state):
    """SplitMix64 step on ``state[0]``; returns a double in [0, 1)."""
    s = state[0] + _GOLDEN
    state[0] = s
    z = (s ^ (s >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    z = z ^ (z >> _S31)
    return (z >> _S11) * _INV53
