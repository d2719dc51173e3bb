"""Splittable seed derivation: independent streams from (master seed, keys...)."""

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """A non-negative seed (below 2**64) that depends only on ``seed`` and the key path."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(2, dtype=np.uint32).astype(np.uint64) @ np.array([1 << 31, 1], dtype=np.uint64))
