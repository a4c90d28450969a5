"""Counter-based seed derivation.

Every random stream in the package is keyed by a tuple of non-negative
integers (master seed, repetition, stream id, member, pass, ...) so results
never depend on execution order or degree of parallelism.
"""

import numpy as np

# stream ids
SPLIT = 0
FRACTION = 1
ARCH = 2
INIT = 3
SHUFFLE = 4
DROPOUT = 5
TUNE = 6
META = 7
MCD = 8
HOLDOUT = 9


def derive_seed(*keys):
    """Map a tuple of non-negative ints to a 32-bit seed."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def rng_for(*keys):
    return np.random.default_rng([int(k) for k in keys])
