"""Seeded random number generation.

Every stochastic operation in this package draws from a Philox4x64-10
counter-based bit generator keyed through ``numpy.random.SeedSequence``.
The generator algorithm is part of the file-format contract: regenerating
a key or corpus from its recorded seed must reproduce it bit for bit, on
any platform. Sub-streams are derived from a root seed plus an integer
path (identity index, sample index, ...) so that independent draws never
share a stream.
"""

import numpy as np

GENERATOR_ALGORITHM = "Philox4x64-10 via numpy.random.SeedSequence"

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    """Validate that seed fits in an unsigned 64-bit integer."""
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be in [0, 2^64), got {seed}")
    return seed


def make_generator(seed: int, *path: int) -> np.random.Generator:
    """Generator for the sub-stream identified by (seed, *path).

    The same (seed, path) always yields the same stream; distinct paths
    yield statistically independent streams.
    """
    seq = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic 64-bit child seed for (seed, *path)."""
    seq = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=tuple(path))
    return int(seq.generate_state(1, np.uint64)[0])
