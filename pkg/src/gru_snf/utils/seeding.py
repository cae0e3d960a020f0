from typing import Dict

import numpy as np

STREAMS: Dict[str, int] = {
    "data": 0,
    "init": 1,
    "train": 2,
    "sampling": 3,
    "mcmc": 4,
}


def substream(seed: int, name: str, *ids: int) -> np.random.Generator:
    """Independent generator for a named substream of the root seed.

    Identical (seed, name, ids) always yield the same stream, regardless of how many
    other streams were created before, so trajectories can be computed in any order.
    """
    if name not in STREAMS:
        raise KeyError(f"Unknown random stream: {name}")
    seed_sequence = np.random.SeedSequence(
        entropy=seed, spawn_key=(STREAMS[name], *(int(i) for i in ids))
    )
    return np.random.Generator(np.random.PCG64(seed_sequence))
