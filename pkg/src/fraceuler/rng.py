"""Reproducible per-path random streams.

Every Monte Carlo path gets its own generator, keyed by
``split(master_seed, path_index)``. Results therefore do not depend on how
paths are grouped into chunks or distributed over threads.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def split(master_seed, index, stream=0):
    """Derive a 64-bit child seed for ``index`` from ``master_seed``.

    ``stream`` separates independent families (e.g. the fBm driver and the
    matrix Brownian motion) drawn under the same master seed.
    """
    ss = np.random.SeedSequence(int(master_seed) & _MASK64,
                                spawn_key=(int(stream), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generator(seed):
    """Counter-based (Philox) generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & _MASK64))
