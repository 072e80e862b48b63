"""
Counter-based random streams. Each stream is keyed by (seed, stream, index...)
so a neuron's draws never depend on how many other neurons exist or the
order they are built in.
"""
from typing import Union

import numpy as np

MISMATCH_STREAM = 1
JITTER_STREAM = 2
STIMULUS_STREAM = 3

SeedLike = Union[int, np.integer]


def generator(seed: SeedLike, stream: int, *index: int) -> np.random.Generator:
    if int(seed) < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    key = [int(seed), int(stream), *(int(i) for i in index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
