"""Counter-based random streams.

Every replicate gets a generator keyed by ``(seed, *counters)`` through
:class:`numpy.random.SeedSequence`, so the stream for replicate ``b`` is the
same no matter which worker runs it or in which order.
"""

import numpy as np


def replicate_seed(seed, *counters):
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(c) for c in counters))


def replicate_rng(seed, *counters):
    return np.random.default_rng(replicate_seed(seed, *counters))
