"""Named random sub-streams derived from one top-level seed.

Every consumer of randomness asks for a stream by name (``"data"``,
``"noise"``, ``"init"``, ``"mixup"``, ``"pseudo"`` ...). Streams with
different names are statistically independent and adding a new stream never
perturbs existing ones.
"""

import zlib

import numpy as np

STREAMS = ("data", "noise", "init", "mixup", "pseudo")


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    key = [int(seed), zlib.crc32(name.encode("utf-8")), *map(int, extra)]
    return np.random.default_rng(np.random.SeedSequence(key))
