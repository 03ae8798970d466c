"""Named, reproducible random substreams.

Every Monte-Carlo run owns one root seed; each source of randomness
(data, noise, availability, delays, masks, ...) draws from its own named
substream so that competing algorithms evaluated within the same run see
identical environment realizations (common random numbers).
"""

import zlib

import numpy as np

__all__ = ["substream"]


def substream(root_seed, run_index, name):
    """Generator for the named substream of one Monte-Carlo run.

    Deterministic in (root_seed, run_index, name); distinct names give
    statistically independent streams.
    """
    tag = zlib.crc32(name.encode("utf-8"))
    seq = np.random.SeedSequence([int(root_seed), int(run_index), tag])
    return np.random.default_rng(seq)
