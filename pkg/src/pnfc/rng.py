"""Counter-based random substreams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, *keys)``.  Two calls with the same key tuple produce the same
stream, independent of what else was drawn before, so frames, layers and
drops can be generated in any order (or in parallel) with identical results.
"""

import numpy as np

# layer tags used as the second element of a substream key
FOG = 1
STREAK = 2
PHOTON = 3
BOOTSTRAP = 4


def substream(seed, *keys):
    """Return an independent ``numpy.random.Generator`` for ``(seed, *keys)``."""
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be a nonnegative integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
