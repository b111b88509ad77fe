"""Counter-based random streams keyed by (seed, module, task).

A stream depends only on its key, never on how many other streams were drawn
before it, so results do not change with scheduling or parallelism.
"""

import zlib

import numpy as np


def stream(seed: int, module: str, task: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(module.encode()), int(task)))
    return np.random.Generator(np.random.Philox(ss))
