"""Deterministic RNG streams keyed by (master seed, replicate indices).

Every Monte Carlo replicate draws from a generator derived from the master
seed and its own integer key path, so results do not depend on how work is
split across threads.
"""

from __future__ import annotations

import numpy as np

# stable integer tags for string-valued keys
_TAGS = {
    "mean": 1,
    "second_order": 2,
    "full": 3,
    "noise_only": 4,
    "locations": 5,
    "z": 6,
    "f0": 7,
    "train": 8,
    "init": 9,
    "marginal": 10,
    "scalar_gap": 11,
    "correlation": 12,
    "regression": 13,
}


def _key(k) -> int:
    if isinstance(k, str):
        return _TAGS[k]
    k = int(k)
    if k < 0:
        raise ValueError(f"seed keys must be non-negative, got {k}")
    return k


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Return a generator for the stream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.default_rng(ss)


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
