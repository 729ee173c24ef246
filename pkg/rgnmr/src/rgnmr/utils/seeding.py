# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
from enum import IntEnum

import numpy as np


class RandomStream(IntEnum):
    """The purpose of a random substream. Each purpose draws from its own stream."""

    LOW_RANK = 0
    OMEGA = 1
    CORRUPTION_SUPPORT = 2
    CORRUPTION_VALUES = 3
    NOISE = 4
    INIT = 5
    TRIAL = 6


def rng_for(seed: int, stream: RandomStream, *keys: int) -> np.random.Generator:
    """Returns an independent PCG64 generator for (seed, stream, *keys).

    The substream is addressed through the SeedSequence spawn key, so the draws for one purpose never
    depend on how many numbers another purpose consumed."""

    sequence = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(int(stream), *(int(key) for key in keys))
    )
    return np.random.Generator(np.random.PCG64(sequence))


def derive_seed(seed: int, *keys: int) -> int:
    """Derives a 32-bit trial seed from a base seed and the trial coordinates."""

    sequence = np.random.SeedSequence(
        entropy=int(seed),
        spawn_key=(int(RandomStream.TRIAL), *(int(key) for key in keys)),
    )
    return int(sequence.generate_state(1, dtype=np.uint32)[0])
