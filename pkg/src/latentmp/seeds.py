"""Deterministic RNG stream derivation.

Every source of randomness in the package draws from its own PCG64 stream,
derived from the master seed plus a fixed stream id (and optional extra path
components such as epoch or layer indices). Disabling one source of
randomness therefore never perturbs the draws of another.
"""

import numpy as np

STREAM_INIT = 0
STREAM_PROJECTION = 1
STREAM_GUMBEL = 2
STREAM_BATCH = 3
STREAM_SPLIT = 4
STREAM_DATA = 5


def stream_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, *path).

    Same arguments always yield the same stream; distinct paths yield
    statistically independent streams.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *path])))
