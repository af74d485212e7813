"""Counter-based random streams.

Every consumer asks for a stream by (seed, purpose, index); the stream is a
Philox generator keyed from a ``SeedSequence`` with that spawn key, so the
numbers a trajectory sees do not depend on how work is scheduled.
"""

import numpy as np

# purposes keep independent uses of one seed apart
TRAJECTORY = 0
CORRELATOR = 1
MISC = 2


def stream(seed: int, index: int, purpose: int = TRAJECTORY) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & ((1 << 64) - 1), spawn_key=(int(purpose), int(index)))
    return np.random.Generator(np.random.Philox(ss))
