"""
Seed Ladder
One root seed fans out into independent, named random streams
"""

from enum import IntEnum
from typing import Tuple

import numpy as np


class Stream(IntEnum):
    """Purpose tags; each purpose draws from its own stream"""
    NETWORK_INIT = 0
    POPULATION_INIT = 1
    EPISODE_RESET = 2
    ACT = 3
    ASSESS = 4
    LOOKAHEAD_ACT = 5
    LOOKAHEAD_ASSESS = 6
    MINIBATCH = 7
    TOPOLOGY = 8
    ADVERSARIES = 9


def stream_seed(root_seed: int, stream: Stream, *path: int) -> np.random.SeedSequence:
    """Seed sequence for (root, purpose, path...)

    path is e.g. (arena, episode) or (timestep,); streams with different
    paths never overlap, so the draw order in one purpose cannot perturb
    another.
    """
    key: Tuple[int, ...] = (int(stream),) + tuple(int(p) for p in path)
    return np.random.SeedSequence(entropy=int(root_seed), spawn_key=key)


def rng_for(root_seed: int, stream: Stream, *path: int) -> np.random.Generator:
    return np.random.default_rng(stream_seed(root_seed, stream, *path))
