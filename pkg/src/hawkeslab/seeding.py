"""Deterministic per-path RNG derivation.

Every Monte-Carlo path owns independent generators derived from a master
seed via ``numpy.random.SeedSequence`` spawn keys.  The derivation is a
pure function of ``(master_seed, path_index, stream_index)``, so results
do not depend on how paths are distributed over workers, and growing a
pre-drawn buffer re-creates the identical stream prefix.

Stream-index registry (fixed across versions):

====================  ==========================================
index                 purpose
====================  ==========================================
0                     arrival thresholds (unit exponentials)
1                     offspring-size marks ``x``
2                     duration marks ``y``
3                     diffusion driver block (SDE integrators)
10 + k (k = 0..3)     arrival thresholds of market stream slot k
20 + k (k = 0..3)     ``x`` marks of market stream slot k
30 + k (k = 0..3)     ``y`` marks of market stream slot k
====================  ==========================================
"""

from __future__ import annotations

import numpy as np

STREAM_THRESHOLD = 0
STREAM_X = 1
STREAM_Y = 2
STREAM_GAUSS = 3
STREAM_MARKET_THRESHOLD = 10  # + slot 0..3
STREAM_MARKET_X = 20  # + slot 0..3
STREAM_MARKET_Y = 30  # + slot 0..3


def seed_derivation(master_seed: int, path_index: int, stream_index: int) -> np.random.SeedSequence:
    """Collision-free seed for one (path, stream) pair."""
    if path_index < 0 or stream_index < 0:
        raise ValueError("path and stream indices must be nonnegative")
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(path_index, stream_index))


def derived_rng(master_seed: int, path_index: int, stream_index: int) -> np.random.Generator:
    """Generator owned by one (path, stream) pair."""
    return np.random.default_rng(seed_derivation(master_seed, path_index, stream_index))
