"""Deterministic RNG substreams keyed by integer tuples.

Every random quantity in the package is drawn from a stream addressed by
(base seed, *key).  Streams are independent of evaluation order, so serial
and threaded execution produce identical results.
"""

import numpy as np

# Role tags keep unrelated draws (truth, ensemble payload, noise, ...) on
# disjoint streams even when the remaining key components collide.
ROLE_PAYLOAD = 1
ROLE_TRUTH = 2
ROLE_NOISE = 3
ROLE_ARIP = 4


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return a generator for the substream addressed by ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)
